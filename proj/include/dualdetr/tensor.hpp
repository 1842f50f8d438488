#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dualdetr/common.hpp"

namespace dualdetr {

// Reverse-mode autodiff over dense row-major tensors. Each op builds a new
// node holding values, its parents, and a closure that pulls the node's
// gradient back into the parents. Graphs are per-pass and freed when the
// last TensorRef into them dies; parameters are long-lived leaves whose
// gradients accumulate until explicitly cleared.
//
// Values are always 64-bit. Any op producing a non-finite value throws
// NumericError.

class Tensor;
using TensorRef = std::shared_ptr<Tensor>;

class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;  // same size as val once requires_grad
    bool requires_grad = false;

    std::vector<TensorRef> parents;
    std::function<void(Tensor&)> backward_fn;  // accumulate grad into parents

    int64_t size() const { return static_cast<int64_t>(val.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double item() const {
        if (val.size() != 1) throw NumericError("item() on non-scalar tensor");
        return val[0];
    }

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
    void clear_grad() { grad.assign(val.size(), 0.0); }
};

int64_t shape_numel(const std::vector<int>& shape);

TensorRef make_tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false);
TensorRef make_tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
TensorRef make_scalar(double v);

// Runs the reverse pass from a scalar root, accumulating into every
// reachable tensor with requires_grad.
void backward(const TensorRef& root);

// ---- elementwise / broadcast ----
TensorRef add(const TensorRef& a, const TensorRef& b);
TensorRef sub(const TensorRef& a, const TensorRef& b);
TensorRef mul(const TensorRef& a, const TensorRef& b);
TensorRef div(const TensorRef& a, const TensorRef& b);
TensorRef scale(const TensorRef& a, double c);
TensorRef add_scalar(const TensorRef& a, double c);
TensorRef neg(const TensorRef& a);
TensorRef relu(const TensorRef& a);
TensorRef absval(const TensorRef& a);
TensorRef minimum(const TensorRef& a, const TensorRef& b);
TensorRef maximum(const TensorRef& a, const TensorRef& b);
TensorRef clamp(const TensorRef& a, double lo, double hi);
TensorRef sigmoid(const TensorRef& a);
// inverse_sigmoid clamps its input to [kInvSigmoidEps, 1-kInvSigmoidEps]
// before the log-odds transform, so inputs touching 0 or 1 stay finite.
inline constexpr double kInvSigmoidEps = 1e-5;
TensorRef inverse_sigmoid(const TensorRef& a);

// row broadcasts on (n x c) matrices
TensorRef add_rowvec(const TensorRef& m, const TensorRef& v);   // + v per row, v is (c)
TensorRef add_per_row(const TensorRef& m, const TensorRef& r);  // + r[i] to row i, r is (n) or (n x 1)
TensorRef mul_per_row(const TensorRef& m, const TensorRef& r);
// multiply column block [h*group_cols, (h+1)*group_cols) by s[h]
TensorRef mul_headwise(const TensorRef& m, const TensorRef& s, int group_cols);

// ---- linear algebra ----
TensorRef matmul(const TensorRef& a, const TensorRef& b);     // (n,k)x(k,m)
TensorRef matmul_nt(const TensorRef& a, const TensorRef& b);  // (n,k)x(m,k)^T -> (n,m)

// ---- shape ----
TensorRef reshape(const TensorRef& a, std::vector<int> shape);
TensorRef slice_cols(const TensorRef& a, int c0, int c1);
TensorRef slice_rows(const TensorRef& a, int r0, int r1);
TensorRef concat_cols(const std::vector<TensorRef>& parts);
TensorRef concat_rows(const std::vector<TensorRef>& parts);
TensorRef gather_rows(const TensorRef& a, std::vector<int> idx);
TensorRef detach(const TensorRef& a);

// ---- reductions / normalizations ----
TensorRef sum(const TensorRef& a);
TensorRef softmax_rows(const TensorRef& a);
TensorRef layer_norm_rows(const TensorRef& x, const TensorRef& gamma, const TensorRef& beta,
                          double eps = 1e-5);

// ---- temporal sampling ----
// Normalized position p maps to continuous row index p*(T-1); fractional
// indices interpolate linearly between neighbors, out-of-range indices clamp
// to the boundary rows. pos holds P positions; output is (P x C).
TensorRef linear_sample(const TensorRef& x, const TensorRef& pos);
// Same sampling but row (q,m,k) of pos reads only head m's channel block of
// x (C/heads wide). pos is flat (Q*heads*points); output ((Q*M*K) x C/M).
TensorRef linear_sample_grouped(const TensorRef& x, const TensorRef& pos, int heads, int points);
// Per-head attention-weighted sum of grouped samples back to (Q x C).
// samples is ((Q*M*K) x C/M), weights is (Q x M*K) with each K-block summing to 1.
TensorRef deform_combine(const TensorRef& samples, const TensorRef& weights, int heads, int points);

// Focal classification loss summed over all entries of prob/target and
// divided by norm. target entries are 0/1; prob entries in (0,1).
TensorRef focal_loss_sum(const TensorRef& prob, const TensorRef& target, double alpha,
                         double gamma, double norm);

// Sinusoidal embedding of P positions into (P x dims): interleaved sin/cos
// pairs over a geometric frequency ladder, differentiable in the positions.
TensorRef sinusoid_embed(const TensorRef& positions, int dims);

// ---- plain scalar helpers (shared by graph ops, init code, and tests) ----
double sigmoid_scalar(double x);
double inverse_sigmoid_scalar(double y);  // clamped like the tensor op

// ---- finite-difference verification ----
// Rebuilds the graph via `forward` (which must read x->val) and compares the
// analytic gradient of the scalar output w.r.t. x against central
// differences. Returns max over coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(const std::function<TensorRef()>& forward, const TensorRef& x,
                  double h = 1e-5);

}  // namespace dualdetr
