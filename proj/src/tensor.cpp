#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace dwtnet {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

int shape_numel(const Shape& s) {
    int n = 1;
    for (int e : s) {
        if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

Tensor Tensor::zeros(const Shape& shape) {
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
    t.grad_ = std::make_shared<std::vector<double>>();
    return t;
}

Tensor Tensor::full(const Shape& shape, double value) {
    Tensor t = zeros(shape);
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
    if (static_cast<int>(values.size()) != shape_numel(shape))
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    t.grad_ = std::make_shared<std::vector<double>>();
    return t;
}

double Tensor::value() const {
    if (numel() != 1) throw UsageError("value() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim())
        throw DimensionError("index rank mismatch for " + shape_str(shape_));
    int off = 0;
    int i = 0;
    for (int v : idx) {
        if (v < 0 || v >= shape_[i]) throw DimensionError("index out of range");
        off = off * shape_[i] + v;
        ++i;
    }
    return (*data_)[off];
}

std::vector<double>& Tensor::grad_acc() const {
    if (!grad_) throw UsageError("grad on undefined tensor");
    if (grad_->empty()) grad_->assign(data_->size(), 0.0);
    return *grad_;
}

const std::vector<double>* Tensor::grad_if() const {
    if (!grad_ || grad_->empty()) return nullptr;
    return grad_.get();
}

void Tensor::clear_grad() const {
    if (grad_) grad_->clear();
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    t.grad_ = std::make_shared<std::vector<double>>();
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw UsageError("backward requires a scalar loss");
    for (auto& op : ops_) {
        for (auto& t : op.inputs) t.clear_grad();
        op.output.clear_grad();
    }
    loss.clear_grad();
    loss.grad_acc()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output.grad_if() == nullptr) continue;  // no downstream use
        it->back(*it);
    }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// Elementwise op with value map and (dy, x, y) -> dx derivative factory.
template <typename Fwd, typename Bwd>
Tensor unary_ew(Tape* tp, const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.mutable_data();
    for (size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
    if (tp) {
        tp->record({name,
                    {a},
                    out,
                    [bwd](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        const auto& x = r.inputs[0].data();
                        const auto& y = r.output.data();
                        for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * bwd(x[i], y[i]);
                    }});
    }
    return out;
}

}  // namespace

Tensor add(Tape* tp, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.mutable_data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
    if (tp) {
        tp->record({"add",
                    {a, b},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        for (size_t i = 0; i < g->size(); ++i) {
                            ga[i] += (*g)[i];
                            gb[i] += (*g)[i];
                        }
                    }});
    }
    return out;
}

Tensor sub(Tape* tp, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.mutable_data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] - xb[i];
    if (tp) {
        tp->record({"sub",
                    {a, b},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        for (size_t i = 0; i < g->size(); ++i) {
                            ga[i] += (*g)[i];
                            gb[i] -= (*g)[i];
                        }
                    }});
    }
    return out;
}

Tensor mul(Tape* tp, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.mutable_data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
    if (tp) {
        tp->record({"mul",
                    {a, b},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xa = r.inputs[0].data();
                        const auto& xb = r.inputs[1].data();
                        auto& ga = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        for (size_t i = 0; i < g->size(); ++i) {
                            ga[i] += (*g)[i] * xb[i];
                            gb[i] += (*g)[i] * xa[i];
                        }
                    }});
    }
    return out;
}

Tensor divide(Tape* tp, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "divide");
    Tensor out = Tensor::zeros(a.shape());
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.mutable_data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] / xb[i];
    if (tp) {
        tp->record({"divide",
                    {a, b},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xa = r.inputs[0].data();
                        const auto& xb = r.inputs[1].data();
                        auto& ga = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        for (size_t i = 0; i < g->size(); ++i) {
                            ga[i] += (*g)[i] / xb[i];
                            gb[i] -= (*g)[i] * xa[i] / (xb[i] * xb[i]);
                        }
                    }});
    }
    return out;
}

Tensor add_scalar(Tape* tp, const Tensor& a, double c) {
    return unary_ew(
        tp, a, "add_scalar", [c](double x) { return x + c; },
        [](double, double) { return 1.0; });
}

Tensor mul_scalar(Tape* tp, const Tensor& a, double c) {
    return unary_ew(
        tp, a, "mul_scalar", [c](double x) { return x * c; },
        [c](double, double) { return c; });
}

Tensor sub_from_scalar(Tape* tp, double c, const Tensor& a) {
    return unary_ew(
        tp, a, "sub_from_scalar", [c](double x) { return c - x; },
        [](double, double) { return -1.0; });
}

Tensor div_by_scalar_tensor(Tape* tp, const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw DimensionError("div_by_scalar_tensor: divisor must be scalar");
    Tensor out = Tensor::zeros(a.shape());
    const double sv = s.data()[0];
    const auto& x = a.data();
    auto& y = out.mutable_data();
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] / sv;
    if (tp) {
        tp->record({"div_by_scalar_tensor",
                    {a, s},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const double sv = r.inputs[1].data()[0];
                        const auto& x = r.inputs[0].data();
                        auto& ga = r.inputs[0].grad_acc();
                        auto& gs = r.inputs[1].grad_acc();
                        double acc = 0.0;
                        for (size_t i = 0; i < g->size(); ++i) {
                            ga[i] += (*g)[i] / sv;
                            acc -= (*g)[i] * x[i] / (sv * sv);
                        }
                        gs[0] += acc;
                    }});
    }
    return out;
}

Tensor exp_op(Tape* tp, const Tensor& a) {
    return unary_ew(
        tp, a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor log_op(Tape* tp, const Tensor& a) {
    return unary_ew(
        tp, a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor abs_op(Tape* tp, const Tensor& a) {
    return unary_ew(
        tp, a, "abs", [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(Tape* tp, const Tensor& a, double lo, double hi) {
    return unary_ew(
        tp, a, "clamp", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor square(Tape* tp, const Tensor& a) {
    return unary_ew(
        tp, a, "square", [](double x) { return x * x; },
        [](double x, double) { return 2.0 * x; });
}

Tensor gelu(Tape* tp, const Tensor& a) {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kBeta = 0.044715;
    return unary_ew(
        tp, a, "gelu",
        [](double x) {
            double u = kAlpha * (x + kBeta * x * x * x);
            return 0.5 * x * (1.0 + std::tanh(u));
        },
        [](double x, double) {
            double u = kAlpha * (x + kBeta * x * x * x);
            double t = std::tanh(u);
            double du = kAlpha * (1.0 + 3.0 * kBeta * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Tensor lrelu(Tape* tp, const Tensor& a, double slope) {
    return unary_ew(
        tp, a, "lrelu", [slope](double x) { return x >= 0.0 ? x : slope * x; },
        [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Tensor tanh_op(Tape* tp, const Tensor& a) {
    return unary_ew(
        tp, a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape* tp, const Tensor& a) {
    return unary_ew(
        tp, a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor sum_all(Tape* tp, const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    Tensor out = Tensor::scalar(s);
    if (tp) {
        tp->record({"sum_all",
                    {a},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        for (double& v : ga) v += (*g)[0];
                    }});
    }
    return out;
}

Tensor mean_all(Tape* tp, const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    Tensor out = Tensor::scalar(s / n);
    if (tp) {
        tp->record({"mean_all",
                    {a},
                    out,
                    [n](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        const double s = (*g)[0] / n;
                        for (double& v : ga) v += s;
                    }});
    }
    return out;
}

Tensor reshape(Tape* tp, const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::from(shape, a.data());
    if (tp) {
        tp->record({"reshape",
                    {a},
                    out,
                    [](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
                    }});
    }
    return out;
}

Tensor transpose2d(Tape* tp, const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose2d expects rank 2");
    const int n = a.extent(0), m = a.extent(1);
    Tensor out = Tensor::zeros({m, n});
    const auto& x = a.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) y[j * n + i] = x[i * m + j];
    if (tp) {
        tp->record({"transpose2d",
                    {a},
                    out,
                    [n, m](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < m; ++j) ga[i * m + j] += (*g)[j * n + i];
                    }});
    }
    return out;
}

Tensor concat(Tape* tp, const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const int rank = parts[0].ndim();
    if (axis < 0 || axis >= rank) throw DimensionError("concat axis out of range");
    Shape out_shape = parts[0].shape();
    int axis_total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != rank) throw DimensionError("concat rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.extent(d) != out_shape[d])
                throw DimensionError("concat extent mismatch on axis " + std::to_string(d));
        axis_total += p.extent(axis);
    }
    out_shape[axis] = axis_total;

    int outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];

    Tensor out = Tensor::zeros(out_shape);
    auto& y = out.mutable_data();
    std::vector<int> axis_ext(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) axis_ext[p] = parts[p].extent(axis);
    for (int o = 0; o < outer; ++o) {
        int dst_axis_off = 0;
        for (size_t p = 0; p < parts.size(); ++p) {
            const auto& x = parts[p].data();
            const int ext = axis_ext[p];
            std::memcpy(&y[(static_cast<size_t>(o) * axis_total + dst_axis_off) * inner],
                        &x[static_cast<size_t>(o) * ext * inner],
                        sizeof(double) * static_cast<size_t>(ext) * inner);
            dst_axis_off += ext;
        }
    }
    if (tp) {
        tp->record({"concat",
                    parts,
                    out,
                    [outer, inner, axis_total, axis_ext](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        for (int o = 0; o < outer; ++o) {
                            int src_axis_off = 0;
                            for (size_t p = 0; p < r.inputs.size(); ++p) {
                                auto& ga = r.inputs[p].grad_acc();
                                const int ext = axis_ext[p];
                                for (int e = 0; e < ext * inner; ++e)
                                    ga[static_cast<size_t>(o) * ext * inner + e] +=
                                        (*g)[(static_cast<size_t>(o) * axis_total + src_axis_off) *
                                                 inner +
                                             e];
                                src_axis_off += ext;
                            }
                        }
                    }});
    }
    return out;
}

Tensor slice(Tape* tp, const Tensor& a, int axis, int from, int to) {
    const int rank = a.ndim();
    if (axis < 0 || axis >= rank) throw DimensionError("slice axis out of range");
    if (from < 0 || to > a.extent(axis) || from >= to) throw DimensionError("bad slice range");
    Shape out_shape = a.shape();
    out_shape[axis] = to - from;
    int outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.extent(d);
    for (int d = axis + 1; d < rank; ++d) inner *= a.extent(d);
    const int src_axis = a.extent(axis), dst_axis = to - from;

    Tensor out = Tensor::zeros(out_shape);
    auto& y = out.mutable_data();
    const auto& x = a.data();
    for (int o = 0; o < outer; ++o)
        std::memcpy(&y[static_cast<size_t>(o) * dst_axis * inner],
                    &x[(static_cast<size_t>(o) * src_axis + from) * inner],
                    sizeof(double) * static_cast<size_t>(dst_axis) * inner);
    if (tp) {
        tp->record({"slice",
                    {a},
                    out,
                    [outer, inner, src_axis, dst_axis, from](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& ga = r.inputs[0].grad_acc();
                        for (int o = 0; o < outer; ++o)
                            for (int e = 0; e < dst_axis * inner; ++e)
                                ga[(static_cast<size_t>(o) * src_axis + from) * inner + e] +=
                                    (*g)[static_cast<size_t>(o) * dst_axis * inner + e];
                    }});
    }
    return out;
}

Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul expects rank-2 tensors");
    const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw DimensionError("matmul inner extents disagree: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = xa[static_cast<size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* brow = &xb[static_cast<size_t>(p) * n];
            double* yrow = &y[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) yrow[j] += av * brow[j];
        }
    if (tp) {
        tp->record({"matmul",
                    {a, b},
                    out,
                    [m, k, n](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xa = r.inputs[0].data();
                        const auto& xb = r.inputs[1].data();
                        auto& ga = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        // dA = dY B^T ; dB = A^T dY
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j) {
                                const double gv = (*g)[static_cast<size_t>(i) * n + j];
                                if (gv == 0.0) continue;
                                for (int p = 0; p < k; ++p) {
                                    ga[static_cast<size_t>(i) * k + p] +=
                                        gv * xb[static_cast<size_t>(p) * n + j];
                                    gb[static_cast<size_t>(p) * n + j] +=
                                        gv * xa[static_cast<size_t>(i) * k + p];
                                }
                            }
                    }});
    }
    return out;
}

Tensor add_row_bias(Tape* tp, const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.extent(0) != x.extent(1))
        throw DimensionError("add_row_bias: x " + shape_str(x.shape()) + ", b " +
                             shape_str(b.shape()));
    const int n = x.extent(0), m = x.extent(1);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    const auto& bv = b.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) y[static_cast<size_t>(i) * m + j] = xv[static_cast<size_t>(i) * m + j] + bv[j];
    if (tp) {
        tp->record({"add_row_bias",
                    {x, b},
                    out,
                    [n, m](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& gx = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < m; ++j) {
                                const double gv = (*g)[static_cast<size_t>(i) * m + j];
                                gx[static_cast<size_t>(i) * m + j] += gv;
                                gb[j] += gv;
                            }
                    }});
    }
    return out;
}

Tensor add_channel_bias(Tape* tp, const Tensor& x, const Tensor& b) {
    if (x.ndim() != 3 || b.ndim() != 1 || b.extent(0) != x.extent(0))
        throw DimensionError("add_channel_bias: x " + shape_str(x.shape()) + ", b " +
                             shape_str(b.shape()));
    const int c = x.extent(0), hw = x.extent(1) * x.extent(2);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    const auto& bv = b.data();
    auto& y = out.mutable_data();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) y[static_cast<size_t>(ch) * hw + i] = xv[static_cast<size_t>(ch) * hw + i] + bv[ch];
    if (tp) {
        tp->record({"add_channel_bias",
                    {x, b},
                    out,
                    [c, hw](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& gx = r.inputs[0].grad_acc();
                        auto& gb = r.inputs[1].grad_acc();
                        for (int ch = 0; ch < c; ++ch) {
                            double acc = 0.0;
                            for (int i = 0; i < hw; ++i) {
                                const double gv = (*g)[static_cast<size_t>(ch) * hw + i];
                                gx[static_cast<size_t>(ch) * hw + i] += gv;
                                acc += gv;
                            }
                            gb[ch] += acc;
                        }
                    }});
    }
    return out;
}

Tensor scale_rows(Tape* tp, const Tensor& x, const Tensor& s) {
    if (x.ndim() != 2 || s.ndim() != 1 || s.extent(0) != x.extent(0))
        throw DimensionError("scale_rows: x " + shape_str(x.shape()) + ", s " +
                             shape_str(s.shape()));
    const int n = x.extent(0), m = x.extent(1);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    const auto& sv = s.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) y[static_cast<size_t>(i) * m + j] = xv[static_cast<size_t>(i) * m + j] * sv[i];
    if (tp) {
        tp->record({"scale_rows",
                    {x, s},
                    out,
                    [n, m](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xv = r.inputs[0].data();
                        const auto& sv = r.inputs[1].data();
                        auto& gx = r.inputs[0].grad_acc();
                        auto& gs = r.inputs[1].grad_acc();
                        for (int i = 0; i < n; ++i) {
                            double acc = 0.0;
                            for (int j = 0; j < m; ++j) {
                                const double gv = (*g)[static_cast<size_t>(i) * m + j];
                                gx[static_cast<size_t>(i) * m + j] += gv * sv[i];
                                acc += gv * xv[static_cast<size_t>(i) * m + j];
                            }
                            gs[i] += acc;
                        }
                    }});
    }
    return out;
}

Tensor conv2d(Tape* tp, const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4) throw DimensionError("conv2d expects x rank 3, w rank 4");
    const int c = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const int d = w.extent(0), wc = w.extent(1), k = w.extent(2), k2 = w.extent(3);
    if (wc != c) throw DimensionError("conv2d channel mismatch");
    if (k != k2 || k % 2 == 0) throw DimensionError("conv2d kernel must be square and odd");
    if (pad < 0 || stride < 1) throw DimensionError("conv2d bad stride/pad");
    if ((h + 2 * pad - k) % stride != 0 || (wd + 2 * pad - k) % stride != 0 ||
        h + 2 * pad < k || wd + 2 * pad < k)
        throw DimensionError("conv2d non-integral output extent");
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (wd + 2 * pad - k) / stride + 1;

    Tensor out = Tensor::zeros({d, ho, wo});
    const auto& xv = x.data();
    const auto& wv = w.data();
    auto& y = out.mutable_data();
    for (int od = 0; od < d; ++od)
        for (int ic = 0; ic < c; ++ic) {
            const double* wslab = &wv[(static_cast<size_t>(od) * c + ic) * k * k];
            const double* xslab = &xv[static_cast<size_t>(ic) * h * wd];
            double* yslab = &y[static_cast<size_t>(od) * ho * wo];
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    double acc = 0.0;
                    for (int ki = 0; ki < k; ++ki) {
                        const int ih = i * stride + ki - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            const int iw = j * stride + kj - pad;
                            if (iw < 0 || iw >= wd) continue;
                            acc += wslab[ki * k + kj] * xslab[ih * wd + iw];
                        }
                    }
                    yslab[i * wo + j] += acc;
                }
        }
    if (tp) {
        tp->record(
            {"conv2d",
             {x, w},
             out,
             [c, h, wd, d, k, stride, pad, ho, wo](const Tape::Record& r) {
                 const auto* g = r.output.grad_if();
                 if (!g) return;
                 const auto& xv = r.inputs[0].data();
                 const auto& wv = r.inputs[1].data();
                 auto& gx = r.inputs[0].grad_acc();
                 auto& gw = r.inputs[1].grad_acc();
                 for (int od = 0; od < d; ++od)
                     for (int i = 0; i < ho; ++i)
                         for (int j = 0; j < wo; ++j) {
                             const double gv = (*g)[(static_cast<size_t>(od) * ho + i) * wo + j];
                             if (gv == 0.0) continue;
                             for (int ic = 0; ic < c; ++ic) {
                                 const double* wslab = &wv[(static_cast<size_t>(od) * c + ic) * k * k];
                                 const double* xslab = &xv[static_cast<size_t>(ic) * h * wd];
                                 double* gxs = &gx[static_cast<size_t>(ic) * h * wd];
                                 double* gws = &gw[(static_cast<size_t>(od) * c + ic) * k * k];
                                 for (int ki = 0; ki < k; ++ki) {
                                     const int ih = i * stride + ki - pad;
                                     if (ih < 0 || ih >= h) continue;
                                     for (int kj = 0; kj < k; ++kj) {
                                         const int iw = j * stride + kj - pad;
                                         if (iw < 0 || iw >= wd) continue;
                                         gxs[ih * wd + iw] += gv * wslab[ki * k + kj];
                                         gws[ki * k + kj] += gv * xslab[ih * wd + iw];
                                     }
                                 }
                             }
                         }
             }});
    }
    return out;
}

Tensor avg_pool2d(Tape* tp, const Tensor& x, int p) {
    if (x.ndim() != 3) throw DimensionError("avg_pool2d expects rank 3");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (p < 1 || h % p != 0 || w % p != 0)
        throw DimensionError("avg_pool2d: " + std::to_string(p) + " does not divide " +
                             shape_str(x.shape()));
    const int ho = h / p, wo = w / p;
    Tensor out = Tensor::zeros({c, ho, wo});
    const auto& xv = x.data();
    auto& y = out.mutable_data();
    const double inv = 1.0 / (p * p);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (int a = 0; a < p; ++a)
                    for (int b = 0; b < p; ++b)
                        acc += xv[(static_cast<size_t>(ch) * h + i * p + a) * w + j * p + b];
                y[(static_cast<size_t>(ch) * ho + i) * wo + j] = acc * inv;
            }
    if (tp) {
        tp->record({"avg_pool2d",
                    {x},
                    out,
                    [c, h, w, p, ho, wo, inv](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& gx = r.inputs[0].grad_acc();
                        for (int ch = 0; ch < c; ++ch)
                            for (int i = 0; i < ho; ++i)
                                for (int j = 0; j < wo; ++j) {
                                    const double gv =
                                        (*g)[(static_cast<size_t>(ch) * ho + i) * wo + j] * inv;
                                    for (int a = 0; a < p; ++a)
                                        for (int b = 0; b < p; ++b)
                                            gx[(static_cast<size_t>(ch) * h + i * p + a) * w +
                                               j * p + b] += gv;
                                }
                    }});
    }
    return out;
}

Tensor upsample_nearest(Tape* tp, const Tensor& x, int p) {
    if (x.ndim() != 3) throw DimensionError("upsample_nearest expects rank 3");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const int ho = h * p, wo = w * p;
    Tensor out = Tensor::zeros({c, ho, wo});
    const auto& xv = x.data();
    auto& y = out.mutable_data();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
                y[(static_cast<size_t>(ch) * ho + i) * wo + j] =
                    xv[(static_cast<size_t>(ch) * h + i / p) * w + j / p];
    if (tp) {
        tp->record({"upsample_nearest",
                    {x},
                    out,
                    [c, h, w, p, ho, wo](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& gx = r.inputs[0].grad_acc();
                        for (int ch = 0; ch < c; ++ch)
                            for (int i = 0; i < ho; ++i)
                                for (int j = 0; j < wo; ++j)
                                    gx[(static_cast<size_t>(ch) * h + i / p) * w + j / p] +=
                                        (*g)[(static_cast<size_t>(ch) * ho + i) * wo + j];
                    }});
    }
    return out;
}

namespace {

// Depth-wise transposed conv, stride = kernel = p. out[c, i*p+a, j*p+b] =
// x[c,i,j] * wd[c,a,b]; with stride == kernel the blocks do not overlap.
Tensor depthwise_tconv(Tape* tp, const Tensor& x, const Tensor& wd, int p) {
    if (x.ndim() != 3 || wd.ndim() != 3) throw DimensionError("depthwise_tconv rank");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (wd.extent(0) != c || wd.extent(1) != p || wd.extent(2) != p)
        throw DimensionError("depthwise_tconv: weight shape " + shape_str(wd.shape()) +
                             " incompatible with channels " + std::to_string(c) + ", p " +
                             std::to_string(p));
    const int ho = h * p, wo = w * p;
    Tensor out = Tensor::zeros({c, ho, wo});
    const auto& xv = x.data();
    const auto& wv = wd.data();
    auto& y = out.mutable_data();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const double v = xv[(static_cast<size_t>(ch) * h + i) * w + j];
                for (int a = 0; a < p; ++a)
                    for (int b = 0; b < p; ++b)
                        y[(static_cast<size_t>(ch) * ho + i * p + a) * wo + j * p + b] =
                            v * wv[(static_cast<size_t>(ch) * p + a) * p + b];
            }
    if (tp) {
        tp->record({"depthwise_tconv",
                    {x, wd},
                    out,
                    [c, h, w, p, ho, wo](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xv = r.inputs[0].data();
                        const auto& wv = r.inputs[1].data();
                        auto& gx = r.inputs[0].grad_acc();
                        auto& gw = r.inputs[1].grad_acc();
                        for (int ch = 0; ch < c; ++ch)
                            for (int i = 0; i < h; ++i)
                                for (int j = 0; j < w; ++j) {
                                    const size_t xi = (static_cast<size_t>(ch) * h + i) * w + j;
                                    double acc = 0.0;
                                    for (int a = 0; a < p; ++a)
                                        for (int b = 0; b < p; ++b) {
                                            const double gv =
                                                (*g)[(static_cast<size_t>(ch) * ho + i * p + a) *
                                                         wo +
                                                     j * p + b];
                                            acc += gv * wv[(static_cast<size_t>(ch) * p + a) * p + b];
                                            gw[(static_cast<size_t>(ch) * p + a) * p + b] +=
                                                gv * xv[xi];
                                        }
                                    gx[xi] += acc;
                                }
                    }});
    }
    return out;
}

// 1x1 channel mix: out[d] = sum_c wp[d,c] x[c]
Tensor pointwise_mix(Tape* tp, const Tensor& x, const Tensor& wp) {
    if (x.ndim() != 3 || wp.ndim() != 2) throw DimensionError("pointwise_mix rank");
    const int c = x.extent(0), hw = x.extent(1) * x.extent(2);
    if (wp.extent(1) != c)
        throw DimensionError("pointwise_mix channel mismatch: weights " + shape_str(wp.shape()) +
                             " vs input channels " + std::to_string(c));
    const int d = wp.extent(0);
    Tensor out = Tensor::zeros({d, x.extent(1), x.extent(2)});
    const auto& xv = x.data();
    const auto& wv = wp.data();
    auto& y = out.mutable_data();
    for (int od = 0; od < d; ++od)
        for (int ic = 0; ic < c; ++ic) {
            const double wvv = wv[static_cast<size_t>(od) * c + ic];
            if (wvv == 0.0) continue;
            for (int i = 0; i < hw; ++i)
                y[static_cast<size_t>(od) * hw + i] += wvv * xv[static_cast<size_t>(ic) * hw + i];
        }
    if (tp) {
        tp->record({"pointwise_mix",
                    {x, wp},
                    out,
                    [c, d, hw](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xv = r.inputs[0].data();
                        const auto& wv = r.inputs[1].data();
                        auto& gx = r.inputs[0].grad_acc();
                        auto& gw = r.inputs[1].grad_acc();
                        for (int od = 0; od < d; ++od)
                            for (int ic = 0; ic < c; ++ic) {
                                const double wvv = wv[static_cast<size_t>(od) * c + ic];
                                double acc = 0.0;
                                for (int i = 0; i < hw; ++i) {
                                    const double gv = (*g)[static_cast<size_t>(od) * hw + i];
                                    gx[static_cast<size_t>(ic) * hw + i] += gv * wvv;
                                    acc += gv * xv[static_cast<size_t>(ic) * hw + i];
                                }
                                gw[static_cast<size_t>(od) * c + ic] += acc;
                            }
                    }});
    }
    return out;
}

}  // namespace

Tensor sep_transposed_conv2d(Tape* tp, const Tensor& x, const Tensor& w_depth,
                             const Tensor& w_point, int p) {
    Tensor up = depthwise_tconv(tp, x, w_depth, p);
    return pointwise_mix(tp, up, w_point);
}

Tensor softmax(Tape* tp, const Tensor& x, int axis) {
    const int rank = x.ndim();
    if (axis < 0 || axis >= rank) throw DimensionError("softmax axis out of range");
    const int n = x.extent(axis);
    int outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.extent(d);
    for (int d = axis + 1; d < rank; ++d) inner *= x.extent(d);

    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& y = out.mutable_data();
    for (int o = 0; o < outer; ++o)
        for (int in = 0; in < inner; ++in) {
            const size_t base = static_cast<size_t>(o) * n * inner + in;
            double mx = -1e300;
            for (int i = 0; i < n; ++i) mx = std::max(mx, xv[base + static_cast<size_t>(i) * inner]);
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                const double e = std::exp(xv[base + static_cast<size_t>(i) * inner] - mx);
                y[base + static_cast<size_t>(i) * inner] = e;
                s += e;
            }
            const double invs = 1.0 / s;
            for (int i = 0; i < n; ++i) y[base + static_cast<size_t>(i) * inner] *= invs;
        }
    if (tp) {
        tp->record({"softmax",
                    {x},
                    out,
                    [outer, inner, n](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& y = r.output.data();
                        auto& gx = r.inputs[0].grad_acc();
                        for (int o = 0; o < outer; ++o)
                            for (int in = 0; in < inner; ++in) {
                                const size_t base = static_cast<size_t>(o) * n * inner + in;
                                double dot = 0.0;
                                for (int i = 0; i < n; ++i) {
                                    const size_t ix = base + static_cast<size_t>(i) * inner;
                                    dot += (*g)[ix] * y[ix];
                                }
                                for (int i = 0; i < n; ++i) {
                                    const size_t ix = base + static_cast<size_t>(i) * inner;
                                    gx[ix] += y[ix] * ((*g)[ix] - dot);
                                }
                            }
                    }});
    }
    return out;
}

Tensor pairwise_sqdist(Tape* tp, const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("pairwise_sqdist expects N x C");
    const int n = x.extent(0), c = x.extent(1);
    if (n == 0) throw DimensionError("pairwise_sqdist: empty input");
    Tensor out = Tensor::zeros({n, n});
    const auto& xv = x.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < c; ++k) {
                const double dlt = xv[static_cast<size_t>(i) * c + k] - xv[static_cast<size_t>(j) * c + k];
                acc += dlt * dlt;
            }
            y[static_cast<size_t>(i) * n + j] = acc;
            y[static_cast<size_t>(j) * n + i] = acc;
        }
    if (tp) {
        tp->record({"pairwise_sqdist",
                    {x},
                    out,
                    [n, c](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const auto& xv = r.inputs[0].data();
                        auto& gx = r.inputs[0].grad_acc();
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < n; ++j) {
                                const double gv = (*g)[static_cast<size_t>(i) * n + j];
                                if (gv == 0.0) continue;
                                for (int k = 0; k < c; ++k) {
                                    const double dlt = xv[static_cast<size_t>(i) * c + k] -
                                                       xv[static_cast<size_t>(j) * c + k];
                                    gx[static_cast<size_t>(i) * c + k] += 2.0 * gv * dlt;
                                    gx[static_cast<size_t>(j) * c + k] -= 2.0 * gv * dlt;
                                }
                            }
                    }});
    }
    return out;
}

Tensor knn_mean(Tape* tp, const Tensor& d, const std::vector<std::vector<int>>& nbr) {
    if (d.ndim() != 2 || d.extent(0) != d.extent(1)) throw DimensionError("knn_mean expects N x N");
    const int n = d.extent(0);
    if (static_cast<int>(nbr.size()) != n) throw DimensionError("knn_mean: neighbor list size");
    Tensor out = Tensor::zeros({n});
    const auto& dv = d.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < n; ++i) {
        if (nbr[i].empty()) throw DimensionError("knn_mean: empty neighbor set");
        double acc = 0.0;
        for (int j : nbr[i]) acc += dv[static_cast<size_t>(i) * n + j];
        y[i] = acc / static_cast<double>(nbr[i].size());
    }
    if (tp) {
        tp->record({"knn_mean",
                    {d},
                    out,
                    [n, nbr](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& gd = r.inputs[0].grad_acc();
                        for (int i = 0; i < n; ++i) {
                            const double gv = (*g)[i] / static_cast<double>(nbr[i].size());
                            for (int j : nbr[i]) gd[static_cast<size_t>(i) * n + j] += gv;
                        }
                    }});
    }
    return out;
}

Tensor gather_rows(Tape* tp, const Tensor& x, const std::vector<int>& idx) {
    if (x.ndim() != 2) throw DimensionError("gather_rows expects N x C");
    const int n = x.extent(0), c = x.extent(1);
    const int m = static_cast<int>(idx.size());
    Tensor out = Tensor::zeros({m, c});
    const auto& xv = x.data();
    auto& y = out.mutable_data();
    for (int i = 0; i < m; ++i) {
        if (idx[i] < 0 || idx[i] >= n) throw DimensionError("gather_rows index out of range");
        std::memcpy(&y[static_cast<size_t>(i) * c], &xv[static_cast<size_t>(idx[i]) * c],
                    sizeof(double) * c);
    }
    if (tp) {
        tp->record({"gather_rows",
                    {x},
                    out,
                    [idx, c](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        auto& gx = r.inputs[0].grad_acc();
                        for (size_t i = 0; i < idx.size(); ++i)
                            for (int k = 0; k < c; ++k)
                                gx[static_cast<size_t>(idx[i]) * c + k] += (*g)[i * c + k];
                    }});
    }
    return out;
}

Tensor cross_entropy_rows(Tape* tp, const Tensor& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy_rows expects M x K");
    const int m = logits.extent(0), k = logits.extent(1);
    if (static_cast<int>(targets.size()) != m)
        throw DimensionError("cross_entropy_rows: target count mismatch");
    const auto& xv = logits.data();
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        if (targets[i] < 0 || targets[i] >= k)
            throw DimensionError("cross_entropy_rows target out of range");
        const double* row = &xv[static_cast<size_t>(i) * k];
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        loss += std::log(s) + mx - row[targets[i]];
    }
    Tensor out = Tensor::scalar(loss / m);
    if (tp) {
        tp->record({"cross_entropy_rows",
                    {logits},
                    out,
                    [m, k, targets](const Tape::Record& r) {
                        const auto* g = r.output.grad_if();
                        if (!g) return;
                        const double gv = (*g)[0] / m;
                        const auto& xv = r.inputs[0].data();
                        auto& gx = r.inputs[0].grad_acc();
                        for (int i = 0; i < m; ++i) {
                            const double* row = &xv[static_cast<size_t>(i) * k];
                            double mx = row[0];
                            for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
                            double s = 0.0;
                            for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
                            for (int j = 0; j < k; ++j) {
                                double p = std::exp(row[j] - mx) / s;
                                gx[static_cast<size_t>(i) * k + j] +=
                                    gv * (p - (j == targets[i] ? 1.0 : 0.0));
                            }
                        }
                    }});
    }
    return out;
}

Tensor stop_gradient(Tape* tp, const Tensor& a) {
    Tensor out = Tensor::from(a.shape(), a.data());
    if (tp) {
        // Recorded so the tape still owns the tensor, but backward is a no-op:
        // gradients never reach the argument.
        tp->record({"stop_gradient", {a}, out, [](const Tape::Record&) {}});
    }
    return out;
}

double finite_diff_check(const std::function<Tensor(Tape*, const Tensor&)>& f, const Tensor& x,
                         double h) {
    Tape tape;
    Tensor loss = f(&tape, x);
    if (loss.numel() != 1) throw UsageError("finite_diff_check: f must return a scalar");
    tape.backward(loss);
    std::vector<double> analytic(x.numel(), 0.0);
    if (const auto* g = x.grad_if()) analytic = *g;

    Tensor probe = x.detached();
    auto& data = probe.mutable_data();
    double worst = 0.0;
    for (int i = 0; i < probe.numel(); ++i) {
        const double orig = data[i];
        data[i] = orig + h;
        const double fp = f(nullptr, probe).value();
        data[i] = orig - h;
        const double fm = f(nullptr, probe).value();
        data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return worst;
}

double finite_diff_check_multi(const std::function<Tensor(Tape*)>& f,
                               const std::vector<Tensor>& leaves, double h, int max_coords,
                               std::uint64_t seed) {
    Tape tape;
    Tensor loss = f(&tape);
    if (loss.numel() != 1) throw UsageError("finite_diff_check_multi: f must return a scalar");
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        if (const auto* g = leaf.grad_if())
            analytic.push_back(*g);
        else
            analytic.emplace_back(leaf.numel(), 0.0);
    }

    Rng rng(derive_seed(seed, "fd-multi"));
    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        // Perturb the shared buffer in place and restore; f sees the change
        // through its captured handles.
        auto& data = const_cast<Tensor&>(leaves[li]).mutable_data();
        std::vector<int> coords(data.size());
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords > 0 && static_cast<int>(coords.size()) > max_coords) {
            for (int i = 0; i < max_coords; ++i) {
                int j = static_cast<int>(rng.uniform_int(i, static_cast<std::int64_t>(coords.size()) - 1));
                std::swap(coords[i], coords[j]);
            }
            coords.resize(max_coords);
        }
        for (int ci : coords) {
            const double orig = data[ci];
            data[ci] = orig + h;
            const double fp = f(nullptr).value();
            data[ci] = orig - h;
            const double fm = f(nullptr).value();
            data[ci] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[li][ci];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace dwtnet
