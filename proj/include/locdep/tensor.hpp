#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace locdep {

using Shape = std::vector<std::int64_t>;

/// Raised for contract violations: mismatched shapes, bad extents, bad
/// arguments. Carries a message naming the offending shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised by autodiff misuse (non-scalar loss, detached loss, double backward).
class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline std::int64_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until a gradient flows in
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

} // namespace detail

/// Dense row-major tensor of doubles. Copies are shallow handles onto the same
/// storage (like a framework tensor); use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        for (auto extent : shape) {
            if (extent < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        }
        impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
        impl_->shape = std::move(shape);
        impl_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 0.0, requires_grad);
    }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor(Shape{}, v); }

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    std::vector<double>& values() { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }

    bool has_grad() const { return defined() && impl_->grad.size() == impl_->data.size(); }
    std::span<double> grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    std::span<const double> grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    bool requires_grad() const noexcept { return defined() && impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }

    double& operator[](std::size_t i) { return impl_->data[i]; }
    double operator[](std::size_t i) const { return impl_->data[i]; }

    /// NCHW element access for 4-D tensors.
    double& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
        return impl_->data[offset4(n, c, y, x)];
    }
    double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return impl_->data[offset4(n, c, y, x)];
    }
    /// Row-major element access for 2-D tensors.
    double& at(std::int64_t y, std::int64_t x) { return impl_->data[offset2(y, x)]; }
    double at(std::int64_t y, std::int64_t x) const { return impl_->data[offset2(y, x)]; }

    /// Deep copy of values; the copy is a fresh leaf.
    Tensor clone(bool requires_grad = false) const {
        return Tensor(shape(), impl_->data, requires_grad);
    }

    /// Same values reinterpreted with a new shape of equal element count.
    /// Shares nothing with the source and does not participate in autodiff.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != static_cast<std::int64_t>(numel())) {
            throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), impl_->data);
    }

    detail::TensorImpl* impl() const noexcept { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& handle() const noexcept { return impl_; }

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    std::size_t offset4(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        const auto& s = impl_->shape;
        return static_cast<std::size_t>(((n * s[1] + c) * s[2] + y) * s[3] + x);
    }
    std::size_t offset2(std::int64_t y, std::int64_t x) const {
        return static_cast<std::size_t>(y * impl_->shape[1] + x);
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Tape of executed operations for reverse-mode differentiation.
///
/// Constructing a Graph makes it the recording target for the current thread
/// until it is destroyed; graphs nest. Operations executed while no graph is
/// active (or on operands that do not require gradients) are not recorded,
/// which is how inference runs. Entries are appended in execution order, so
/// every operand of an entry was produced by an earlier entry or is a leaf.
class Graph {
public:
    struct Entry {
        std::vector<std::shared_ptr<detail::TensorImpl>> operands;
        std::shared_ptr<detail::TensorImpl> output;
        std::function<void()> backward;
    };

    Graph() : previous_(current()) { current() = this; }
    ~Graph() { current() = previous_; }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Innermost graph recording on this thread, or nullptr.
    static Graph* active() noexcept { return current(); }

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    void record(Entry entry) { entries_.push_back(std::move(entry)); }

    /// Accumulates d(loss)/d(t) into every requires_grad tensor t reachable
    /// from `loss`. Leaf gradients accumulate across graphs until zeroed.
    void backward(const Tensor& loss) {
        if (consumed_) throw GraphError("backward() called twice without reset()");
        if (!loss.defined() || loss.numel() != 1) {
            throw GraphError("backward() needs a scalar loss, got shape " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
        }
        if (!loss.requires_grad()) throw GraphError("backward() on a loss detached from any parameter");
        const auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                                     [&](const Entry& e) { return e.output == loss.handle(); });
        if (it == entries_.rend()) throw GraphError("loss was not produced by this graph");
        consumed_ = true;
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] = 1.0;
        for (auto e = it; e != entries_.rend(); ++e) {
            if (e->output->grad.empty()) continue; // nothing flowed into this op
            e->backward();
        }
    }

    /// Drops the tape so the graph can record and differentiate again.
    void reset() {
        entries_.clear();
        consumed_ = false;
    }

private:
    static Graph*& current() {
        thread_local Graph* graph = nullptr;
        return graph;
    }

    std::vector<Entry> entries_;
    Graph* previous_ = nullptr;
    bool consumed_ = false;
};

namespace detail {

/// True when `out` should be recorded: some operand needs gradients and a
/// graph is listening.
inline bool should_record(std::initializer_list<const Tensor*> operands) {
    if (Graph::active() == nullptr) return false;
    return std::any_of(operands.begin(), operands.end(),
                       [](const Tensor* t) { return t != nullptr && t->requires_grad(); });
}

/// Records `out` on the active graph. `fn` is called during backward with the
/// output impl; it reads out->grad and accumulates into operands that
/// require gradients.
template <typename Fn>
void record(Tensor& out, std::initializer_list<const Tensor*> operands, Fn fn) {
    out.set_requires_grad(true);
    Graph::Entry entry;
    for (const Tensor* t : operands) {
        if (t != nullptr && t->defined()) entry.operands.push_back(t->handle());
    }
    entry.output = out.handle();
    entry.backward = [fn = std::move(fn), o = out.impl()]() mutable { fn(*o); };
    Graph::active()->record(std::move(entry));
}

/// Gradient buffer of `t` if it participates in differentiation, else empty.
inline std::span<double> grad_sink(const Tensor& t) {
    if (!t.requires_grad()) return {};
    t.impl()->ensure_grad();
    return t.impl()->grad;
}

} // namespace detail

} // namespace locdep
