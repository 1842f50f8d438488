#include "dualdetr/model.hpp"

namespace dualdetr {

void ModelConfig::validate() const {
    if (dim < 4 || dim % 4 != 0) throw ConfigError("model dim must be a positive multiple of 4");
    if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
    if (num_queries < 1) throw ConfigError("num_queries must be at least 1");
    if (enc_layers < 0 || dec_layers < 1) throw ConfigError("bad layer counts");
    if (instance_width() % heads != 0 || boundary_width() % heads != 0)
        throw ConfigError("branch widths must be divisible by the head count");
    if (align && init == InitMode::Learned)
        throw ConfigError("conflicting fields: align=on requires init=joint or position-only");
    if (!align && init != InitMode::Learned)
        throw ConfigError("conflicting fields: align=off requires init=learned");
    if (shared_branch && init == InitMode::Joint)
        throw ConfigError("conflicting fields: branch=shared cannot use init=joint");
    if (level != QueryLevel::Dual && refine != RefineMode::Off)
        throw ConfigError("conflicting fields: single-level configs require refine=off");
}

DualDetrModel::DualDetrModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Init init(registry_, cfg_.seed);
    encoder_ = std::make_unique<Encoder>(init, cfg_.dim, cfg_.enc_layers, cfg_.heads, cfg_.points,
                                         cfg_.dim * cfg_.ffn_mult, cfg_.num_classes);
    query_init_ = std::make_unique<QueryInit>(init, cfg_.num_queries, cfg_.instance_width(),
                                              cfg_.boundary_width(), cfg_.dim, cfg_.init,
                                              cfg_.level);
    DecoderStructure s;
    s.layers = cfg_.dec_layers;
    s.dim = cfg_.dim;
    s.instance_width = cfg_.instance_width();
    s.boundary_width = cfg_.boundary_width();
    s.heads = cfg_.heads;
    s.points = cfg_.points;
    s.ffn_dim = cfg_.dim * cfg_.ffn_mult;
    s.num_classes = cfg_.num_classes;
    s.nq = cfg_.num_queries;
    s.level = cfg_.level;
    s.refine = cfg_.refine;
    decoder_ = std::make_unique<Decoder>(init, s);
}

ModelForward DualDetrModel::forward(const TensorRef& features, int valid,
                                    std::optional<QueryLevel> level_override) const {
    ModelForward out;
    int t = features->rows();
    if (valid < 1 || valid > t) valid = t;
    out.encoder = encoder_->forward(features, valid);

    QueryLevel active = level_override.value_or(cfg_.level);

    out.selected_indices = select_topk(out.encoder.proposals, cfg_.num_queries, valid);
    std::vector<EncoderProposal> selected;
    if (cfg_.align) {
        selected.reserve(out.selected_indices.size());
        for (int i : out.selected_indices)
            selected.push_back(out.encoder.proposals[static_cast<size_t>(i)]);
    }

    // The dense head is supervised over every valid position, not just the
    // selected ones. Restricting the auxiliary loss to the top-N_q locks the
    // selection onto whatever wins the initial score ties and the encoder
    // never learns to rank the rest.
    out.encoder_detections.intervals = slice_rows(out.encoder.dense_intervals, 0, valid);
    out.encoder_detections.scores = slice_rows(out.encoder.dense_scores, 0, valid);

    out.initial_queries = query_init_->build(selected);

    TensorRef x_s, x_e, x_i;
    if (cfg_.shared_branch) {
        x_s = out.encoder.features;
        x_e = out.encoder.features;
        x_i = out.encoder.features;
    } else {
        x_s = out.encoder.start_features;
        x_e = out.encoder.end_features;
        x_i = out.encoder.instance_features;
    }
    double valid_span =
        t == 1 ? 1.0 : static_cast<double>(valid - 1) / static_cast<double>(t - 1);

    out.layer_outputs =
        decoder_->forward(out.initial_queries, x_s, x_e, x_i, valid_span, active);
    return out;
}

}  // namespace dualdetr
