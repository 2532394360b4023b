#include "tabsynth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "tabsynth/error.hpp"

namespace tabsynth::ad {

namespace {

thread_local bool g_recording = true;

class RecordingScope {
 public:
  explicit RecordingScope(bool on) : previous_(g_recording) { g_recording = on; }
  ~RecordingScope() { g_recording = previous_; }

 private:
  bool previous_;
};

Var make_op(Matrix value, std::vector<Var> parents, Node::BackwardFn fn, const char* op,
            bool double_differentiable = true) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool track = false;
  if (g_recording) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(fn);
    n->double_differentiable = double_differentiable;
  }
  return Var(std::move(n));
}

[[noreturn]] void shape_error(const char* op, const Var& a, const Var& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                            std::to_string(b.cols()));
}

bool needs(const Var& self, std::size_t i) { return self.get()->parents[i].requires_grad(); }
const Var& parent(const Var& self, std::size_t i) { return self.get()->parents[i]; }

// Brings a and b to a common shape, inserting broadcasts where one side has extent 1.
std::pair<Var, Var> broadcast_pair(const char* op, const Var& a, const Var& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a, b};
  auto extent = [&](Eigen::Index x, Eigen::Index y) -> Eigen::Index {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    shape_error(op, a, b);
  };
  const Eigen::Index r = extent(a.rows(), b.rows());
  const Eigen::Index c = extent(a.cols(), b.cols());
  Var aa = (a.rows() == r && a.cols() == c) ? a : broadcast_to(a, r, c);
  Var bb = (b.rows() == r && b.cols() == c) ? b : broadcast_to(b, r, c);
  return {aa, bb};
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

// --- Var ---------------------------------------------------------------------

const Matrix& Var::value() const { return node_->value; }
Matrix& Var::mutable_value() { return node_->value; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }
const Matrix& Var::grad() const { return node_->grad; }
void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}
double Var::item() const {
  if (value().size() != 1) throw Error(ErrorCode::NotScalarLoss, "item() on a non-scalar");
  return value()(0, 0);
}
const std::string& Var::op() const { return node_->op; }

bool recording() { return g_recording; }
NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "leaf";
  return Var(std::move(n));
}

// --- engine ------------------------------------------------------------------

namespace {

std::vector<std::shared_ptr<Node>> topo_order(const Var& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  if (!root.requires_grad()) return order;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& p = node->parents[next++];
      if (p.requires_grad() && visited.insert(p.get()).second) stack.emplace_back(p.node(), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

std::unordered_map<Node*, Var> run_backward(const Var& loss, const std::unordered_set<Node*>& keep,
                                            bool create_graph) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorCode::NotScalarLoss, "loss must be 1x1, got " + std::to_string(loss.rows()) + "x" +
                                              std::to_string(loss.cols()));
  }
  std::unordered_map<Node*, Var> grads;
  const auto order = topo_order(loss);
  if (order.empty()) return grads;
  RecordingScope scope(create_graph);
  grads[loss.get()] = constant(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    auto g = grads.find(node.get());
    if (g == grads.end() || !node->backward) continue;
    if (create_graph && !node->double_differentiable) {
      throw Error(ErrorCode::UnsupportedOpForDoubleBackprop, "op '" + node->op + "' has no differentiable backward");
    }
    const Var self(node);
    const Var grad_out = g->second;
    if (!keep.count(node.get())) grads.erase(g);
    auto pg = node->backward(grad_out, self);
    for (std::size_t i = 0; i < pg.size(); ++i) {
      const auto& p = node->parents[i];
      if (!pg[i].defined() || !p.requires_grad()) continue;
      auto [slot, inserted] = grads.try_emplace(p.get(), pg[i]);
      if (!inserted) slot->second = add(slot->second, pg[i]);
    }
  }
  return grads;
}

}  // namespace

std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt, bool create_graph) {
  std::unordered_set<Node*> keep;
  for (const auto& w : wrt) keep.insert(w.get());
  auto grads = run_backward(loss, keep, create_graph);
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.get());
    out.push_back(it != grads.end() ? it->second : constant(Matrix::Zero(w.rows(), w.cols())));
  }
  return out;
}

void backward(const Var& loss) {
  std::unordered_set<Node*> leaves;
  for (const auto& n : topo_order(loss)) {
    if (!n->backward) leaves.insert(n.get());
  }
  auto grads = run_backward(loss, leaves, false);
  for (auto* leaf : leaves) {
    auto it = grads.find(leaf);
    if (it == grads.end()) continue;
    if (leaf->grad.size() == 0) {
      leaf->grad = it->second.value();
    } else {
      leaf->grad += it->second.value();
    }
  }
}

// --- ops ---------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix v = a.value() * b.value();
  return make_op(std::move(v), {a, b},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   std::vector<Var> out(2);
                   if (needs(self, 0)) out[0] = matmul(g, transpose(parent(self, 1)));
                   if (needs(self, 1)) out[1] = matmul(transpose(parent(self, 0)), g);
                   return out;
                 },
                 "matmul");
}

Var transpose(const Var& a) {
  Matrix v = a.value().transpose();
  return make_op(std::move(v), {a},
                 [](const Var& g, const Var&) -> std::vector<Var> { return {transpose(g)}; }, "transpose");
}

Var add(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair("add", a0, b0);
  Matrix v = a.value() + b.value();
  return make_op(std::move(v), {a, b},
                 [](const Var& g, const Var&) -> std::vector<Var> { return {g, g}; }, "add");
}

Var sub(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair("sub", a0, b0);
  Matrix v = a.value() - b.value();
  return make_op(std::move(v), {a, b},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   std::vector<Var> out(2);
                   out[0] = g;
                   if (needs(self, 1)) out[1] = scale(g, -1.0);
                   return out;
                 },
                 "sub");
}

Var mul(const Var& a0, const Var& b0) {
  auto [a, b] = broadcast_pair("mul", a0, b0);
  Matrix v = a.value().cwiseProduct(b.value());
  return make_op(std::move(v), {a, b},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   std::vector<Var> out(2);
                   if (needs(self, 0)) out[0] = mul(g, parent(self, 1));
                   if (needs(self, 1)) out[1] = mul(g, parent(self, 0));
                   return out;
                 },
                 "mul");
}

Var scale(const Var& a, double c) {
  Matrix v = a.value() * c;
  return make_op(std::move(v), {a},
                 [c](const Var& g, const Var&) -> std::vector<Var> { return {scale(g, c)}; }, "scale");
}

Var add_scalar(const Var& a, double c) {
  Matrix v = a.value().array() + c;
  return make_op(std::move(v), {a}, [](const Var& g, const Var&) -> std::vector<Var> { return {g}; },
                 "add_scalar");
}

Var broadcast_to(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  const bool ok_r = a.rows() == rows || a.rows() == 1;
  const bool ok_c = a.cols() == cols || a.cols() == 1;
  if (!ok_r || !ok_c) {
    throw Error(ErrorCode::ShapeMismatch, "cannot broadcast " + std::to_string(a.rows()) + "x" +
                                              std::to_string(a.cols()) + " to " + std::to_string(rows) + "x" +
                                              std::to_string(cols));
  }
  Matrix v = a.value().replicate(rows / a.rows(), cols / a.cols());
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return make_op(std::move(v), {a},
                 [r0, c0](const Var& g, const Var&) -> std::vector<Var> { return {sum_to(g, r0, c0)}; },
                 "broadcast_to");
}

Var sum_to(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  const bool ok_r = rows == a.rows() || rows == 1;
  const bool ok_c = cols == a.cols() || cols == 1;
  if (!ok_r || !ok_c) throw Error(ErrorCode::ShapeMismatch, "sum_to: incompatible target shape");
  Matrix v;
  if (rows == a.rows() && cols == a.cols()) {
    v = a.value();
  } else if (rows == 1 && cols == 1) {
    v = Matrix::Constant(1, 1, a.value().sum());
  } else if (rows == 1) {
    v = a.value().colwise().sum();
  } else {
    v = a.value().rowwise().sum();
  }
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return make_op(std::move(v), {a},
                 [r0, c0](const Var& g, const Var&) -> std::vector<Var> { return {broadcast_to(g, r0, c0)}; },
                 "sum_to");
}

Var leaky_relu(const Var& a, double slope) {
  Matrix mask = (a.value().array() > 0.0).select(Matrix::Ones(a.rows(), a.cols()), slope);
  Matrix v = a.value().cwiseProduct(mask);
  return make_op(std::move(v), {a},
                 [mask = std::move(mask)](const Var& g, const Var&) -> std::vector<Var> {
                   return {mul(g, constant(mask))};
                 },
                 slope == 0.0 ? "relu" : "leaky_relu");
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var tanh(const Var& a) {
  Matrix v = a.value().array().tanh();
  return make_op(std::move(v), {a},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   return {mul(g, add_scalar(scale(mul(self, self), -1.0), 1.0))};
                 },
                 "tanh");
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return make_op(std::move(v), {a},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   return {mul(g, mul(self, add_scalar(scale(self, -1.0), 1.0)))};
                 },
                 "sigmoid");
}

Var softplus(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return make_op(std::move(v), {a},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   return {mul(g, sigmoid(parent(self, 0)))};
                 },
                 "softplus");
}

Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  return make_op(std::move(v), {a},
                 [](const Var& g, const Var& self) -> std::vector<Var> { return {mul(g, self)}; }, "exp");
}

Var log(const Var& a) {
  Matrix v = a.value().array().log();
  return make_op(std::move(v), {a},
                 [](const Var& g, const Var& self) -> std::vector<Var> {
                   return {mul(g, pow(parent(self, 0), -1.0))};
                 },
                 "log");
}

Var pow(const Var& a, double p) {
  Matrix v = a.value().array().pow(p);
  return make_op(std::move(v), {a},
                 [p](const Var& g, const Var& self) -> std::vector<Var> {
                   if (p == 1.0) return {g};
                   return {mul(g, scale(pow(parent(self, 0), p - 1.0), p))};
                 },
                 "pow");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front(), p);
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    ranges.emplace_back(off, p.cols());
    off += p.cols();
  }
  return make_op(std::move(v), parts,
                 [ranges](const Var& g, const Var& self) -> std::vector<Var> {
                   std::vector<Var> out(ranges.size());
                   for (std::size_t i = 0; i < ranges.size(); ++i) {
                     if (needs(self, i)) out[i] = slice_cols(g, ranges[i].first, ranges[i].second);
                   }
                   return out;
                 },
                 "concat_cols");
}

Var slice_cols(const Var& a, Eigen::Index offset, Eigen::Index len) {
  if (offset < 0 || len < 0 || offset + len > a.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_cols out of range");
  }
  Matrix v = a.value().middleCols(offset, len);
  const Eigen::Index total = a.cols();
  return make_op(std::move(v), {a},
                 [offset, total](const Var& g, const Var&) -> std::vector<Var> {
                   return {embed_cols(g, offset, total)};
                 },
                 "slice_cols");
}

Var embed_cols(const Var& a, Eigen::Index offset, Eigen::Index total_cols) {
  if (offset < 0 || offset + a.cols() > total_cols) throw Error(ErrorCode::ShapeMismatch, "embed_cols out of range");
  Matrix v = Matrix::Zero(a.rows(), total_cols);
  v.middleCols(offset, a.cols()) = a.value();
  const Eigen::Index len = a.cols();
  return make_op(std::move(v), {a},
                 [offset, len](const Var& g, const Var&) -> std::vector<Var> {
                   return {slice_cols(g, offset, len)};
                 },
                 "embed_cols");
}

Var dropout(const Var& a, double p, std::mt19937_64& rng, bool training) {
  if (!training || p <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(a, constant(std::move(mask)));
}

Var layer_norm(const Var& a, double eps) {
  const Eigen::Index r = a.rows(), c = a.cols();
  const double inv_c = 1.0 / static_cast<double>(c);
  Var mu = scale(sum_to(a, r, 1), inv_c);
  Var centered = sub(a, mu);
  Var var = scale(sum_to(mul(centered, centered), r, 1), inv_c);
  Var inv_std = pow(add_scalar(var, eps), -0.5);
  return mul(centered, inv_std);
}

Var softmax(const Var& a) {
  Matrix y = softmax_rows(a.value());
  return make_op(y, {a},
                 [y](const Var& g, const Var&) -> std::vector<Var> {
                   const Matrix& gv = g.value();
                   Matrix dx = y.cwiseProduct(gv);
                   const Vector s = dx.rowwise().sum();
                   dx -= y.cwiseProduct(s.replicate(1, y.cols()));
                   return {constant(std::move(dx))};
                 },
                 "softmax", false);
}

Var log_softmax(const Var& a) {
  const Matrix shift = a.value().rowwise().maxCoeff();
  Var shifted = sub(a, constant(shift));
  Var lse = log(sum_to(exp(shifted), a.rows(), 1));
  return sub(shifted, lse);
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const auto& x = logits.value();
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: one label per row required");
  }
  Matrix p = softmax_rows(x);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    if (k >= x.cols()) throw Error(ErrorCode::LabelOutOfRange, "label outside the logit width");
    loss -= std::log(std::max(p(i, k), 1e-300));
  }
  const double n = static_cast<double>(x.rows());
  return make_op(Matrix::Constant(1, 1, loss / n), {logits},
                 [p = std::move(p), labels, n](const Var& g, const Var&) -> std::vector<Var> {
                   Matrix d = p;
                   for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, static_cast<Eigen::Index>(labels[i])) -= 1.0;
                   d *= g.value()(0, 0) / n;
                   return {constant(std::move(d))};
                 },
                 "cross_entropy", false);
}

Var sum(const Var& a) { return sum_to(a, 1, 1); }
Var mean(const Var& a) { return scale(sum_to(a, 1, 1), 1.0 / static_cast<double>(a.value().size())); }
Var mean_rows(const Var& a) { return scale(sum_to(a, 1, a.cols()), 1.0 / static_cast<double>(a.rows())); }

Var variance_rows(const Var& a) {
  Var centered = sub(a, mean_rows(a));
  return mean_rows(mul(centered, centered));
}

Var l2_norm_rows(const Var& a, double eps) { return pow(add_scalar(sum_to(mul(a, a), a.rows(), 1), eps), 0.5); }
Var l2_norm(const Var& a, double eps) { return pow(add_scalar(sum(mul(a, a)), eps), 0.5); }

Var gumbel_softmax(const Var& logits, double temperature, const Matrix& noise) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidConfig, "gumbel temperature must be positive");
  return softmax(scale(add(logits, constant(noise)), 1.0 / temperature));
}

Var gumbel_softmax(const Var& logits, double temperature, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(std::nextafter(0.0, 1.0), 1.0);
  Matrix noise(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = -std::log(-std::log(u(rng)));
  return gumbel_softmax(logits, temperature, noise);
}

// --- gradient penalty ------------------------------------------------------------

Matrix interpolate_rows(const Matrix& a, const Matrix& b, const Vector& t, Interpolation mode) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double ti = t(i);
    const auto ra = a.row(i);
    const auto rb = b.row(i);
    if (mode == Interpolation::Spherical) {
      const double na = ra.norm(), nb = rb.norm();
      if (na > 1e-12 && nb > 1e-12) {
        const double cos_omega = std::clamp(ra.dot(rb) / (na * nb), -1.0, 1.0);
        const double omega = std::acos(cos_omega);
        const double so = std::sin(omega);
        if (so > 1e-6) {
          out.row(i) = (std::sin((1.0 - ti) * omega) / so) * ra + (std::sin(ti * omega) / so) * rb;
          continue;
        }
      }
    }
    out.row(i) = (1.0 - ti) * ra + ti * rb;
  }
  return out;
}

PenaltyResult gradient_penalty(const std::function<Var(const Var&)>& critic, const Matrix& real, const Matrix& fake,
                               double coefficient, std::mt19937_64& rng, Interpolation mode) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient_penalty: real and fake batches differ in shape");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector t(real.rows());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = u(rng);
  Var x_hat = parameter(interpolate_rows(real, fake, t, mode));
  RecordingScope scope(true);
  Var out = critic(x_hat);
  Var g = grad(sum(out), {x_hat}, true).front();
  Var norms = l2_norm_rows(g);
  Var penalty = scale(mean(pow(add_scalar(norms, -1.0), 2.0)), coefficient);
  PenaltyResult result{penalty, {}};
  result.gradient_norms.assign(norms.value().data(), norms.value().data() + norms.value().size());
  return result;
}

}  // namespace tabsynth::ad
