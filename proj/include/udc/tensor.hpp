#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace udc {

/// Extents of a dense (batch, channel, height, width) array.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr std::array<std::size_t, 4> dims() const noexcept { return {n, c, h, w}; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const;
};

/// 64-byte aligned storage. Vectorised kernels pick different code paths for different
/// pointer alignments, so fixed alignment keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense f64 tensor with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Values are treated as
/// immutable once an op has consumed them; only the optimizer writes to parameter
/// data through mutable_data(). Use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor from_buffer(Shape shape, Buffer values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Gradient buffer, allocated (zero-filled) on first access.
    std::span<double> grad_buffer() const;
    void zero_grad();
    void drop_grad();

    Tensor clone() const;
    /// Same values, no gradient tracking.
    Tensor detached() const { return clone_as(false); }
    Tensor clone_as(bool requires_grad) const;

    /// Throws NumericError naming `label` when data or grad holds NaN/Inf.
    void validate_finite(const std::string& label = "tensor") const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        Buffer data;
        Buffer grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    friend class Tape;
};

/// Explicit reverse-mode tape.
///
/// Ops append one node each; backward() replays the nodes in strict reverse recording
/// order. Leaf gradients accumulate across backward() calls until zero_grad(); the
/// gradients of intermediate tensors are reset at the start of every backward().
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const noexcept { return recording_; }
    void set_recording(bool value) noexcept { recording_ = value; }

    /// True when an op over `inputs` must be recorded.
    bool needs_grad(std::initializer_list<const Tensor*> inputs) const;

    void record(std::string op, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_fn);

    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    std::vector<std::string> recorded_ops() const;
    /// Test fixture: every node recorded as `op` contributes `factor` times its true input
    /// gradients during backward(). An empty name disables the fault.
    void set_gradient_fault(std::string op, double factor) {
        fault_op_ = std::move(op);
        fault_factor_ = factor;
    }
    const std::string& node_op(std::size_t i) const { return nodes_.at(i).op; }
    const std::vector<Tensor>& node_inputs(std::size_t i) const { return nodes_.at(i).inputs; }
    /// Node indices visited by the most recent backward(), in visit order.
    const std::vector<std::size_t>& last_replay() const noexcept { return last_replay_; }

private:
    struct Node {
        std::string op;
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward_fn;
    };
    void run_faulted(Node& node);

    std::vector<Node> nodes_;
    std::vector<std::size_t> last_replay_;
    bool recording_;
    std::string fault_op_;
    double fault_factor_ = 1.0;
};

void zero_grad(std::span<Tensor> tensors);

} // namespace udc
