#include "udc/tensor.hpp"

#include "udc/error.hpp"

#include <algorithm>
#include <cmath>

namespace udc {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : Tensor(from_buffer(shape, Buffer(values.begin(), values.end()), requires_grad)) {}

Tensor Tensor::from_buffer(Shape shape, Buffer values, bool requires_grad) {
    if (values.size() != shape.numel()) {
        throw ShapeError("tensor " + shape.str() + " needs " + std::to_string(shape.numel()) + " values, got " +
                         std::to_string(values.size()));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = shape;
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(shape, 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    return from_buffer(shape, Buffer(shape.numel(), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1, 1, 1, 1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->shape;
}

std::span<const double> Tensor::data() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return impl_->data[0];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const Shape& s = shape();
    return impl_->data[((n * s.c + c) * s.h + y) * s.w + x];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!impl_) throw ShapeError("use of undefined tensor");
    impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->grad;
}

std::span<double> Tensor::grad_buffer() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::drop_grad() {
    if (impl_) {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

Tensor Tensor::clone() const { return clone_as(requires_grad()); }

Tensor Tensor::clone_as(bool requires_grad) const {
    return from_buffer(shape(), impl_->data, requires_grad);
}

void Tensor::validate_finite(const std::string& label) const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(impl_->data.begin(), impl_->data.end(), finite)) {
        throw NumericError("non-finite value in " + label);
    }
    if (!std::all_of(impl_->grad.begin(), impl_->grad.end(), finite)) {
        throw NumericError("non-finite gradient in " + label);
    }
}

bool Tape::needs_grad(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->requires_grad(); });
}

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_fn) {
    nodes_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got " + (loss.defined() ? loss.shape().str() : "undefined"));
    }
    auto it = std::find_if(nodes_.rbegin(), nodes_.rend(), [&](const Node& n) { return n.output.same_storage(loss); });
    if (it == nodes_.rend()) throw std::logic_error("backward(): loss tensor was not produced on this tape");
    const std::size_t last = static_cast<std::size_t>(std::distance(it, nodes_.rend())) - 1;

    // Intermediate results restart from zero; leaves keep accumulating.
    for (std::size_t i = 0; i <= last; ++i) nodes_[i].output.zero_grad();

    Tensor root = loss;
    root.grad_buffer()[0] += 1.0;

    last_replay_.clear();
    for (std::size_t i = last + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.output.has_grad()) continue;
        for (Tensor& in : node.inputs) {
            if (in.requires_grad()) in.grad_buffer();
        }
        if (!fault_op_.empty() && node.op == fault_op_) {
            run_faulted(node);
        } else {
            node.backward_fn();
        }
        last_replay_.push_back(i);
    }
}

void Tape::run_faulted(Node& node) {
    std::vector<Tensor> targets;
    for (const Tensor& in : node.inputs) {
        if (!in.requires_grad()) continue;
        const bool seen = std::any_of(targets.begin(), targets.end(), [&](const Tensor& t) { return t.same_storage(in); });
        if (!seen) targets.push_back(in);
    }
    std::vector<std::vector<double>> before;
    for (const Tensor& t : targets) before.emplace_back(t.grad().begin(), t.grad().end());
    node.backward_fn();
    for (std::size_t k = 0; k < targets.size(); ++k) {
        auto g = targets[k].grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = before[k][i] + fault_factor_ * (g[i] - before[k][i]);
    }
}

std::vector<std::string> Tape::recorded_ops() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.op);
    return out;
}

void zero_grad(std::span<Tensor> tensors) {
    for (Tensor& t : tensors) t.zero_grad();
}

} // namespace udc
