#pragma once

// Scalar reverse-mode autodiff on an explicit tape.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace pnr::verify {

class Tape;

class Var {
public:
    Var() = default;
    double value() const;
    double grad() const;
    std::size_t index() const noexcept { return index_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;

    friend Var operator+(Var a, Var b);
    friend Var operator-(Var a, Var b);
    friend Var operator*(Var a, Var b);
    friend Var operator/(Var a, Var b);
    friend Var operator*(Var a, double s);
    friend Var operator+(Var a, double s);
    friend Var exp(Var a);
    friend Var log(Var a);
};

class Tape {
public:
    Var variable(double value) { return push(value, {}); }
    Var constant(double value) { return push(value, {}); }

    // Seeds d(out)/d(out) = 1 and sweeps the tape backwards.
    void backward(Var out) {
        for (auto& n : nodes_) n.grad = 0.0;
        nodes_[out.index_].grad = 1.0;
        for (std::size_t k = nodes_.size(); k-- > 0;) {
            const Node& n = nodes_[k];
            for (std::size_t p = 0; p < n.parent_count; ++p)
                nodes_[n.parents[p]].grad += n.partials[p] * n.grad;
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    friend class Var;
    friend Var operator+(Var a, Var b);
    friend Var operator-(Var a, Var b);
    friend Var operator*(Var a, Var b);
    friend Var operator/(Var a, Var b);
    friend Var operator*(Var a, double s);
    friend Var operator+(Var a, double s);
    friend Var exp(Var a);
    friend Var log(Var a);

    struct Node {
        double value = 0.0;
        double grad = 0.0;
        std::size_t parents[2] = {0, 0};
        double partials[2] = {0.0, 0.0};
        std::size_t parent_count = 0;
    };

    struct Edge {
        std::size_t parent;
        double partial;
    };

    Var push(double value, std::initializer_list<Edge> edges) {
        Node n;
        n.value = value;
        for (const Edge& e : edges) {
            n.parents[n.parent_count] = e.parent;
            n.partials[n.parent_count] = e.partial;
            ++n.parent_count;
        }
        nodes_.push_back(n);
        return Var(this, nodes_.size() - 1);
    }

    Var unary(Var a, double value, double partial) {
        return push(value, {Edge{a.index_, partial}});
    }
    Var binary(Var a, Var b, double value, double pa, double pb) {
        return push(value, {Edge{a.index_, pa}, Edge{b.index_, pb}});
    }

    std::vector<Node> nodes_;
};

inline double Var::value() const { return tape_->nodes_[index_].value; }
inline double Var::grad() const { return tape_->nodes_[index_].grad; }

inline Var operator+(Var a, Var b) { return a.tape_->binary(a, b, a.value() + b.value(), 1.0, 1.0); }
inline Var operator-(Var a, Var b) { return a.tape_->binary(a, b, a.value() - b.value(), 1.0, -1.0); }
inline Var operator*(Var a, Var b) {
    return a.tape_->binary(a, b, a.value() * b.value(), b.value(), a.value());
}
inline Var operator/(Var a, Var b) {
    const double bv = b.value();
    return a.tape_->binary(a, b, a.value() / bv, 1.0 / bv, -a.value() / (bv * bv));
}
inline Var operator*(Var a, double s) { return a.tape_->unary(a, a.value() * s, s); }
inline Var operator+(Var a, double s) { return a.tape_->unary(a, a.value() + s, 1.0); }
inline Var exp(Var a) {
    const double e = std::exp(a.value());
    return a.tape_->unary(a, e, e);
}
inline Var log(Var a) { return a.tape_->unary(a, std::log(a.value()), 1.0 / a.value()); }

}  // namespace pnr::verify
