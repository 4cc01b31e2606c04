#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace dwtnet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

// Dense f64 tensor. A Tensor is a cheap handle: copies share the data buffer
// and the gradient slot. Data is treated as immutable once an operation has
// produced it; gradients are the only mutable state and are owned by the
// tape machinery.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double value) { return from({1}, {value}); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int numel() const { return data_ ? static_cast<int>(data_->size()) : 0; }
    int extent(int axis) const { return shape_.at(static_cast<size_t>(axis)); }

    const std::vector<double>& data() const { return *data_; }
    std::vector<double>& mutable_data() { return *data_; }

    double value() const;  // scalar convenience, throws unless numel()==1
    double at(std::initializer_list<int> idx) const;

    // Gradient slot. Empty vector means "no gradient yet" (all zeros).
    bool has_grad() const { return grad_ && !grad_->empty(); }
    std::vector<double>& grad_acc() const;           // allocates zeros on demand
    const std::vector<double>* grad_if() const;      // nullptr when empty
    void clear_grad() const;

    // Same logical tensor (shared buffers)?
    bool same_as(const Tensor& o) const { return data_ == o.data_; }

    // New leaf sharing this tensor's data but with a fresh gradient slot and
    // no tape history. Used to cut a value out of the recorded graph.
    Tensor detached() const;

    bool all_finite() const;

   private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<std::vector<double>> grad_;
};

// Records every operation applied while it is active. backward() replays the
// records in reverse, visiting each exactly once; leaf gradients accumulate
// by summation, so the result is independent of consumer order.
class Tape {
   public:
    struct Record {
        const char* name;
        std::vector<Tensor> inputs;
        Tensor output;
        // Reads output.grad, accumulates into inputs' grads.
        std::function<void(const Record&)> back;
    };

    void record(Record r) { ops_.push_back(std::move(r)); }
    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss)=1 and replays the tape backwards. loss must be a
    // scalar recorded on this tape. All gradients touched by the tape are
    // reset first, so each call computes fresh gradients.
    void backward(const Tensor& loss);

   private:
    std::vector<Record> ops_;
};

// ---- elementwise / scalar ----
Tensor add(Tape* tp, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tp, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tp, const Tensor& a, const Tensor& b);
Tensor divide(Tape* tp, const Tensor& a, const Tensor& b);
Tensor add_scalar(Tape* tp, const Tensor& a, double c);
Tensor mul_scalar(Tape* tp, const Tensor& a, double c);
Tensor sub_from_scalar(Tape* tp, double c, const Tensor& a);  // c - a
Tensor div_by_scalar_tensor(Tape* tp, const Tensor& a, const Tensor& s);  // a / s, s scalar tensor
Tensor exp_op(Tape* tp, const Tensor& a);
Tensor log_op(Tape* tp, const Tensor& a);
Tensor abs_op(Tape* tp, const Tensor& a);
Tensor clamp(Tape* tp, const Tensor& a, double lo, double hi);
Tensor square(Tape* tp, const Tensor& a);

// ---- activations ----
Tensor gelu(Tape* tp, const Tensor& a);           // tanh approximation
Tensor lrelu(Tape* tp, const Tensor& a, double slope = 0.1);
Tensor tanh_op(Tape* tp, const Tensor& a);
Tensor sigmoid(Tape* tp, const Tensor& a);

// ---- reductions ----
Tensor sum_all(Tape* tp, const Tensor& a);   // -> scalar
Tensor mean_all(Tape* tp, const Tensor& a);  // -> scalar

// ---- shape / layout ----
Tensor reshape(Tape* tp, const Tensor& a, const Shape& shape);
Tensor transpose2d(Tape* tp, const Tensor& a);
Tensor concat(Tape* tp, const std::vector<Tensor>& parts, int axis);
Tensor slice(Tape* tp, const Tensor& a, int axis, int from, int to);  // [from, to)

// ---- linear algebra ----
Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b);
Tensor add_row_bias(Tape* tp, const Tensor& x, const Tensor& b);      // x: N x M, b: M
Tensor add_channel_bias(Tape* tp, const Tensor& x, const Tensor& b);  // x: C x H x W, b: C
Tensor scale_rows(Tape* tp, const Tensor& x, const Tensor& s);        // row i scaled by s[i]

// ---- spatial ops ----
Tensor conv2d(Tape* tp, const Tensor& x, const Tensor& w, int stride, int pad);
Tensor avg_pool2d(Tape* tp, const Tensor& x, int p);
Tensor upsample_nearest(Tape* tp, const Tensor& x, int p);
// Depth-wise transposed convolution with stride == kernel size (non-overlapping
// upsampling), followed by a 1x1 point-wise channel mix.
Tensor sep_transposed_conv2d(Tape* tp, const Tensor& x, const Tensor& w_depth,
                             const Tensor& w_point, int p);

// ---- attention helpers ----
Tensor softmax(Tape* tp, const Tensor& x, int axis);
Tensor pairwise_sqdist(Tape* tp, const Tensor& x);  // x: N x C -> N x N
// mean of selected entries per row: out[i] = (1/k) sum_j d[i, nbr[i][j]]
Tensor knn_mean(Tape* tp, const Tensor& d, const std::vector<std::vector<int>>& nbr);
Tensor gather_rows(Tape* tp, const Tensor& x, const std::vector<int>& idx);
// mean negative log-likelihood of targets under row-wise softmax(logits)
Tensor cross_entropy_rows(Tape* tp, const Tensor& logits, const std::vector<int>& targets);

// ---- gradient control ----
Tensor stop_gradient(Tape* tp, const Tensor& a);

// Worst-case relative error between the tape gradient of f at x and central
// finite differences with step h. f is invoked with a tape to obtain the
// analytic gradient and with nullptr for the probe evaluations. Relative
// error uses denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                         const Tensor& x, double h = 1e-5);

// Same check across several leaves feeding one scalar; f sees the (possibly
// perturbed) leaves through the captured handles. When max_coords > 0 only
// that many randomly chosen coordinates per leaf are probed.
double finite_diff_check_multi(const std::function<Tensor(Tape*)>& f,
                               const std::vector<Tensor>& leaves, double h = 1e-5,
                               int max_coords = 0, std::uint64_t seed = 0);

}  // namespace dwtnet
