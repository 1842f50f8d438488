#include "dualdetr/queries.hpp"

#include <algorithm>

#include "dualdetr/matching.hpp"

namespace dualdetr {

Interval positions_to_interval(const DualQuerySet& q, int k, QueryLevel level) {
    double s, e;
    if (level == QueryLevel::Instance) {
        double c = q.i_pos->val[static_cast<size_t>(k) * 2];
        double d = q.i_pos->val[static_cast<size_t>(k) * 2 + 1];
        s = c - d / 2;
        e = c + d / 2;
    } else {
        s = q.s_pos->val[static_cast<size_t>(k)];
        e = q.e_pos->val[static_cast<size_t>(k)];
    }
    if (s > e) std::swap(s, e);
    Interval out;
    out.start = std::min(1.0, std::max(0.0, s));
    out.end = std::min(1.0, std::max(0.0, e));
    return out;
}

TensorRef instance_interval_tensor(const TensorRef& i_pos) {
    TensorRef c = slice_cols(i_pos, 0, 1);
    TensorRef half = scale(slice_cols(i_pos, 1, 2), 0.5);
    TensorRef lo = sub(c, half);
    TensorRef hi = add(c, half);
    TensorRef s = clamp(minimum(lo, hi), 0.0, 1.0);
    TensorRef e = clamp(maximum(lo, hi), 0.0, 1.0);
    return concat_cols({s, e});
}

TensorRef boundary_interval_tensor(const TensorRef& s_pos, const TensorRef& e_pos) {
    TensorRef s = clamp(minimum(s_pos, e_pos), 0.0, 1.0);
    TensorRef e = clamp(maximum(s_pos, e_pos), 0.0, 1.0);
    return concat_cols({s, e});
}

QueryInit::QueryInit(Init& init, int nq, int instance_width, int boundary_width, int feature_dim,
                     InitMode mode, QueryLevel level)
    : nq_(nq),
      instance_width_(instance_width),
      boundary_width_(boundary_width),
      feature_dim_(feature_dim),
      mode_(mode),
      level_(level) {
    bool wants_instance = level != QueryLevel::Boundary;
    bool wants_boundary = level != QueryLevel::Instance;
    if (mode != InitMode::Joint) {
        if (wants_instance)
            i_con_embed_ = init.normal("queries.i_con", {nq, instance_width}, 0.02);
        if (wants_boundary) {
            s_con_embed_ = init.normal("queries.s_con", {nq, boundary_width}, 0.02);
            e_con_embed_ = init.normal("queries.e_con", {nq, boundary_width}, 0.02);
        }
    }
    if (mode == InitMode::Learned) {
        if (wants_instance) i_pos_logits_ = init.normal("queries.i_pos", {nq, 2}, 1.0);
        if (wants_boundary) {
            s_pos_logits_ = init.normal("queries.s_pos", {nq, 1}, 1.0);
            e_pos_logits_ = init.normal("queries.e_pos", {nq, 1}, 1.0);
        }
    }
}

DualQuerySet QueryInit::build(const std::vector<EncoderProposal>& selected) const {
    DualQuerySet q;
    q.count = nq_;
    bool wants_instance = level_ != QueryLevel::Boundary;
    bool wants_boundary = level_ != QueryLevel::Instance;

    if (mode_ == InitMode::Learned) {
        if (wants_instance) {
            q.i_con = i_con_embed_;
            q.i_pos = sigmoid(i_pos_logits_);
        }
        if (wants_boundary) {
            q.s_con = s_con_embed_;
            q.e_con = e_con_embed_;
            q.s_pos = sigmoid(s_pos_logits_);
            q.e_pos = sigmoid(e_pos_logits_);
        }
        return q;
    }

    if (static_cast<int>(selected.size()) != nq_)
        throw ConfigError("query initialization expects one proposal per query");
    for (const auto& p : selected)
        if (p.end < p.start) throw DataError("proposal with end < start rejected at query init");

    q.matched_proposals = selected;
    q.source_indices.reserve(selected.size());
    std::vector<double> spos, epos, ipos;
    spos.reserve(selected.size());
    epos.reserve(selected.size());
    ipos.reserve(selected.size() * 2);
    for (const auto& p : selected) {
        q.source_indices.push_back(p.source_index);
        spos.push_back(p.start);
        epos.push_back(p.end);
        ipos.push_back((p.start + p.end) / 2.0);
        ipos.push_back(p.end - p.start);
    }
    if (wants_boundary) {
        q.s_pos = make_tensor({nq_, 1}, std::move(spos));
        q.e_pos = make_tensor({nq_, 1}, std::move(epos));
    }
    if (wants_instance) q.i_pos = make_tensor({nq_, 2}, std::move(ipos));

    if (mode_ == InitMode::PositionOnly) {
        if (wants_instance) q.i_con = i_con_embed_;
        if (wants_boundary) {
            q.s_con = s_con_embed_;
            q.e_con = e_con_embed_;
        }
        return q;
    }

    // Joint: channel-split each proposal's feature with the same layout as
    // the encoder partition (start | end | instance).
    int quarter = feature_dim_ / 4;
    std::vector<double> scon, econ, icon;
    for (const auto& p : selected) {
        if (static_cast<int>(p.feature.size()) != feature_dim_)
            throw ConfigError("proposal feature width mismatch at query init");
        scon.insert(scon.end(), p.feature.begin(), p.feature.begin() + quarter);
        econ.insert(econ.end(), p.feature.begin() + quarter, p.feature.begin() + 2 * quarter);
        icon.insert(icon.end(), p.feature.begin() + 2 * quarter, p.feature.end());
    }
    if (wants_boundary) {
        if (boundary_width_ != quarter)
            throw ConfigError("joint init requires boundary width = D/4");
        q.s_con = make_tensor({nq_, quarter}, std::move(scon));
        q.e_con = make_tensor({nq_, quarter}, std::move(econ));
    }
    if (wants_instance) {
        if (instance_width_ != feature_dim_ / 2)
            throw ConfigError("joint init requires instance width = D/2");
        q.i_con = make_tensor({nq_, feature_dim_ / 2}, std::move(icon));
    }
    return q;
}

}  // namespace dualdetr
