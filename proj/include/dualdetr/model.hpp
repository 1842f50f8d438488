#pragma once

#include <memory>
#include <optional>

#include "dualdetr/decoder.hpp"

namespace dualdetr {

struct ModelConfig {
    int dim = 256;
    int enc_layers = 6;
    int dec_layers = 5;
    int num_queries = 150;
    int heads = 8;
    int points = 4;
    int num_classes = 0;
    int ffn_mult = 4;
    QueryLevel level = QueryLevel::Dual;
    bool shared_branch = false;  // one decoder over the unpartitioned map
    bool align = true;           // match queries to encoder proposals
    InitMode init = InitMode::Joint;
    RefineMode refine = RefineMode::Parallel;
    uint64_t seed = 42;

    int instance_width() const { return shared_branch ? dim : dim / 2; }
    int boundary_width() const { return shared_branch ? dim : dim / 4; }
    void validate() const;
};

struct ModelForward {
    std::vector<DetectionSet> layer_outputs;  // one per decoder layer, last is final
    DetectionSet encoder_detections;          // top-N_q proposals for auxiliary supervision
    EncoderOutput encoder;
    DualQuerySet initial_queries;
    std::vector<int> selected_indices;
};

class DualDetrModel {
public:
    explicit DualDetrModel(const ModelConfig& cfg);

    // features: (T x D) window; valid: non-padded snippet count (<= T).
    // level_override lets tests run a dual model with one branch disabled.
    ModelForward forward(const TensorRef& features, int valid = -1,
                         std::optional<QueryLevel> level_override = std::nullopt) const;

    ParamRegistry& params() { return registry_; }
    const ParamRegistry& params() const { return registry_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ParamRegistry registry_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<QueryInit> query_init_;
    std::unique_ptr<Decoder> decoder_;
};

}  // namespace dualdetr
