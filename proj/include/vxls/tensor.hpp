#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "vxls/errors.hpp"

namespace vxls {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

template <typename T>
class TapeT;

// Dense N-D value. Storage is shared between tensors that alias the same
// buffer (ops always allocate fresh outputs, so sharing is read-only by
// convention). `node >= 0` means the tensor is tracked on a tape.
template <typename T>
struct TensorT {
    Shape shape;
    std::shared_ptr<std::vector<T>> store;
    std::int32_t node = -1;
    bool requires_grad = false;

    TensorT() : store(std::make_shared<std::vector<T>>()) {}

    explicit TensorT(Shape s, T fill = T(0))
        : shape(std::move(s)),
          store(std::make_shared<std::vector<T>>(static_cast<std::size_t>(numel_of(shape)), fill)) {}

    TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), store() {
        if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeMismatch("tensor data length does not match shape");
        store = std::make_shared<std::vector<T>>(std::move(values));
    }

    std::int64_t numel() const { return numel_of(shape); }
    std::int64_t dim(std::size_t i) const { return shape[i]; }
    std::size_t rank() const { return shape.size(); }

    const std::vector<T>& data() const { return *store; }
    std::vector<T>& mut() { return *store; }
    const T* ptr() const { return store->data(); }
    T* mptr() { return store->data(); }

    T scalar() const {
        if (numel() != 1) throw ShapeMismatch("scalar() on tensor with numel != 1");
        return (*store)[0];
    }

    bool tracked() const { return node >= 0; }

    static TensorT full(Shape s, T v) { return TensorT(std::move(s), v); }
    static TensorT zeros(Shape s) { return TensorT(std::move(s), T(0)); }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Reverse-mode tape. Nodes are appended in execution order, so node ids are
// already a topological order; backward() walks them in reverse. Gradients
// are allocated lazily — a node never touched by the sweep keeps an empty
// buffer and reads back as exact zeros.
template <typename T>
class TapeT {
public:
    // invoked with the tape and the node's own id (to read its gradient)
    using BackwardFn = std::function<void(TapeT&, std::int32_t)>;

    std::int32_t record(Shape out_shape, BackwardFn fn) {
        nodes_.push_back(Node{std::move(out_shape), {}, std::move(fn)});
        return static_cast<std::int32_t>(nodes_.size()) - 1;
    }

    // register a leaf whose gradient should be retained
    void watch(TensorT<T>& t) {
        t.node = record(t.shape, BackwardFn{});
        t.requires_grad = true;
    }

    void backward(const TensorT<T>& root) {
        if (root.node < 0) throw NonScalarRoot("backward root is not on the tape");
        if (root.numel() != 1) throw NonScalarRoot("backward root must be scalar");
        if (ran_backward_) throw Error("tape already consumed; reset() before reuse");
        ran_backward_ = true;
        grad_buf(root.node).assign(1, T(1));
        for (std::int32_t i = root.node; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad.empty() || !n.backward) continue;  // untouched or leaf
            n.backward(*this, i);
        }
    }

    // gradient accumulator for a node, allocated (zeroed) on first access
    std::vector<T>& grad_buf(std::int32_t id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(numel_of(n.shape)), T(0));
        return n.grad;
    }

    // gradient of a watched leaf; exact zeros when the leaf is unreachable
    TensorT<T> grad(const TensorT<T>& leaf) {
        if (leaf.node < 0) throw Error("grad() of a tensor that is not on the tape");
        const Node& n = nodes_[static_cast<std::size_t>(leaf.node)];
        if (n.grad.empty()) return TensorT<T>::zeros(leaf.shape);
        return TensorT<T>(leaf.shape, n.grad);
    }

    void reset() {
        nodes_.clear();
        ran_backward_ = false;
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    bool consumed() const { return ran_backward_; }
    const Shape& node_shape(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

private:
    struct Node {
        Shape shape;
        std::vector<T> grad;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace vxls
