#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rmo/autodiff.hpp"
#include "rmo/matrix.hpp"
#include "rmo/random.hpp"

namespace rmo {

/// One gated recurrent layer. Gate blocks are stacked in the order
/// (input, forget, cell candidate, output), each `hidden` rows tall.
/// Every gate has two biases, one on the input side and one on the
/// recurrent side.
struct LstmLayer {
  Matrix w_ih;  // 4h x in
  Matrix w_hh;  // 4h x h
  Matrix b_ih;  // 1 x 4h
  Matrix b_hh;  // 1 x 4h
};

/// Coordinate-wise network: scalar in, scalar out, shared across every
/// coordinate it is applied to.
struct RecurrentNet {
  std::size_t hidden = 0;
  std::vector<LstmLayer> layers;
  Matrix head_w;  // 1 x h
  Matrix head_b;  // 1 x 1

  static RecurrentNet zeros(std::size_t hidden, std::size_t num_layers) {
    if (hidden < 1 || num_layers < 1) throw Error("recurrent net needs hidden, layers >= 1");
    RecurrentNet net;
    net.hidden = hidden;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t in = l == 0 ? 1 : hidden;
      net.layers.push_back(LstmLayer{Matrix(4 * hidden, in), Matrix(4 * hidden, hidden),
                                     Matrix(1, 4 * hidden), Matrix(1, 4 * hidden)});
    }
    net.head_w = Matrix(1, hidden);
    net.head_b = Matrix(1, 1);
    return net;
  }

  /// Weights uniform in [-0.1, 0.1]; input-side forget bias 1, other biases 0.
  static RecurrentNet initialized(std::size_t hidden, std::size_t num_layers, Rng& rng) {
    RecurrentNet net = zeros(hidden, num_layers);
    auto fill = [&rng](Matrix& m) {
      for (double& v : m.data()) v = rng.uniform(-0.1, 0.1);
    };
    for (LstmLayer& layer : net.layers) {
      fill(layer.w_ih);
      fill(layer.w_hh);
      for (std::size_t k = hidden; k < 2 * hidden; ++k) layer.b_ih(0, k) = 1.0;
    }
    fill(net.head_w);
    return net;
  }

  std::size_t num_layers() const noexcept { return layers.size(); }

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = prefix + "layer" + std::to_string(l) + ".";
      f(p + "w_ih", self.layers[l].w_ih);
      f(p + "w_hh", self.layers[l].w_hh);
      f(p + "b_ih", self.layers[l].b_ih);
      f(p + "b_hh", self.layers[l].b_hh);
    }
    f(prefix + "head_w", self.head_w);
    f(prefix + "head_b", self.head_b);
  }
};

/// Learned optimizer weights: one network for row coordinates, one for
/// column coordinates.
struct OptimizerParams {
  RecurrentNet row_net;
  RecurrentNet col_net;

  static OptimizerParams zeros(std::size_t hidden = 20, std::size_t num_layers = 2) {
    return {RecurrentNet::zeros(hidden, num_layers), RecurrentNet::zeros(hidden, num_layers)};
  }
  static OptimizerParams initialized(std::size_t hidden, std::size_t num_layers, Rng& rng) {
    RecurrentNet r = RecurrentNet::initialized(hidden, num_layers, rng);
    RecurrentNet c = RecurrentNet::initialized(hidden, num_layers, rng);
    return {std::move(r), std::move(c)};
  }

  std::size_t hidden() const noexcept { return row_net.hidden; }
  std::size_t num_layers() const noexcept { return row_net.num_layers(); }

  /// Visits every stored tensor with a stable dotted name.
  template <typename F>
  void for_each_tensor(F&& f) {
    RecurrentNet::visit(row_net, "row_net.", f);
    RecurrentNet::visit(col_net, "col_net.", f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    RecurrentNet::visit(row_net, "row_net.", f);
    RecurrentNet::visit(col_net, "col_net.", f);
  }

  /// Number of scalars actually stored.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }

  friend bool operator==(const OptimizerParams& a, const OptimizerParams& b) {
    bool eq = a.hidden() == b.hidden() && a.num_layers() == b.num_layers();
    if (!eq) return false;
    std::vector<const Matrix*> rhs;
    b.for_each_tensor([&rhs](const std::string&, const Matrix& m) { rhs.push_back(&m); });
    std::size_t k = 0;
    a.for_each_tensor([&](const std::string&, const Matrix& m) { eq = eq && m == *rhs[k++]; });
    return eq;
  }
};

/// Closed-form scalar count of both networks:
/// 2 * [ sum_l 4 (h in_l + h^2 + 2h) + (h + 1) ], in_1 = 1, in_l = h otherwise.
inline std::size_t count_parameters(std::size_t hidden, std::size_t num_layers) {
  if (hidden < 1 || num_layers < 1) throw Error("count_parameters needs hidden, layers >= 1");
  std::size_t per_net = 0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = l == 0 ? 1 : hidden;
    per_net += 4 * (hidden * in + hidden * hidden + 2 * hidden);
  }
  per_net += hidden + 1;
  return 2 * per_net;
}

/// Hidden and cell state of a batch of coordinates: one N x h matrix per layer.
struct CellState {
  std::vector<Matrix> h;
  std::vector<Matrix> c;

  static CellState zeros(std::size_t coords, std::size_t hidden, std::size_t num_layers) {
    CellState s;
    s.h.assign(num_layers, Matrix(coords, hidden));
    s.c.assign(num_layers, Matrix(coords, hidden));
    return s;
  }
  std::size_t coords() const { return h.empty() ? 0 : h.front().rows(); }
  friend bool operator==(const CellState&, const CellState&) = default;
};

/// A RecurrentNet whose tensors live on a tape, either as leaves (to take
/// gradients) or as constants (plain evaluation).
struct BoundNet {
  struct Layer {
    ad::Var w_ih, w_hh, b_ih, b_hh;
  };
  std::size_t hidden = 0;
  std::vector<Layer> layers;
  ad::Var head_w, head_b;

  static BoundNet bind(ad::Tape& tape, const RecurrentNet& net, bool as_leaves) {
    auto put = [&](const Matrix& m) { return as_leaves ? tape.leaf(m) : tape.constant(m); };
    BoundNet b;
    b.hidden = net.hidden;
    for (const LstmLayer& l : net.layers) {
      Layer bl;
      bl.w_ih = put(l.w_ih);
      bl.w_hh = put(l.w_hh);
      bl.b_ih = put(l.b_ih);
      bl.b_hh = put(l.b_hh);
      b.layers.push_back(bl);
    }
    b.head_w = put(net.head_w);
    b.head_b = put(net.head_b);
    return b;
  }

  /// Visits the bound tensors in the same order as RecurrentNet::visit.
  template <typename F>
  void for_each_var(F&& f) const {
    for (const Layer& l : layers) {
      f(l.w_ih);
      f(l.w_hh);
      f(l.b_ih);
      f(l.b_hh);
    }
    f(head_w);
    f(head_b);
  }
};

struct BoundCellOutput {
  ad::Var y;  // N x 1
  std::vector<ad::Var> h;
  std::vector<ad::Var> c;
};

/// One recurrent step for a batch of N independent coordinates. Row k of
/// every operand belongs to coordinate k alone, so the result per
/// coordinate is the same as running the coordinates one at a time.
inline BoundCellOutput cell_forward(const BoundNet& net, const ad::Var& x,
                                    const std::vector<ad::Var>& h_prev,
                                    const std::vector<ad::Var>& c_prev) {
  using namespace ad;
  const std::size_t hsz = net.hidden;
  if (h_prev.size() != net.layers.size() || c_prev.size() != net.layers.size()) {
    throw StateError("cell_forward: state has " + std::to_string(h_prev.size()) +
                     " layers, network has " + std::to_string(net.layers.size()));
  }
  BoundCellOutput out;
  Var input = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const BoundNet::Layer& layer = net.layers[l];
    if (h_prev[l].cols() != hsz || h_prev[l].rows() != x.rows() ||
        !h_prev[l].value().same_shape(c_prev[l].value())) {
      throw StateError("cell_forward: state shape " + h_prev[l].value().shape() +
                       " does not match " + Matrix::shape_string(x.rows(), hsz));
    }
    Var gates = add(matmul(input, transpose(layer.w_ih)), matmul(h_prev[l], transpose(layer.w_hh)));
    gates = add_row(add_row(gates, layer.b_ih), layer.b_hh);
    Var in_gate = sigmoid(slice_cols(gates, 0, hsz));
    Var forget_gate = sigmoid(slice_cols(gates, hsz, hsz));
    Var candidate = tanh(slice_cols(gates, 2 * hsz, hsz));
    Var out_gate = sigmoid(slice_cols(gates, 3 * hsz, hsz));
    Var c_next = add(mul(forget_gate, c_prev[l]), mul(in_gate, candidate));
    Var h_next = mul(out_gate, tanh(c_next));
    out.h.push_back(h_next);
    out.c.push_back(c_next);
    input = h_next;
  }
  out.y = add_row(matmul(input, transpose(net.head_w)), net.head_b);
  return out;
}

/// Untracked evaluation of a batch of coordinates; advances `state`.
inline std::vector<double> cell_forward(const RecurrentNet& net, std::span<const double> inputs,
                                        CellState& state) {
  if (state.h.size() != net.num_layers() || state.coords() != inputs.size()) {
    throw StateError("cell_forward: state registered for " + std::to_string(state.coords()) +
                     " coordinates, got " + std::to_string(inputs.size()));
  }
  ad::Tape tape;
  BoundNet bound = BoundNet::bind(tape, net, false);
  std::vector<ad::Var> h, c;
  for (std::size_t l = 0; l < state.h.size(); ++l) {
    h.push_back(tape.constant(state.h[l]));
    c.push_back(tape.constant(state.c[l]));
  }
  BoundCellOutput o = cell_forward(bound, tape.constant(Matrix::column(inputs)), h, c);
  for (std::size_t l = 0; l < state.h.size(); ++l) {
    state.h[l] = o.h[l].value();
    state.c[l] = o.c[l].value();
  }
  const auto y = o.y.value().data();
  return std::vector<double>(y.begin(), y.end());
}

/// Single-coordinate convenience form.
inline double cell_forward(const RecurrentNet& net, double x, CellState& state) {
  const double in[1] = {x};
  return cell_forward(net, std::span<const double>(in, 1), state).front();
}

}  // namespace rmo
