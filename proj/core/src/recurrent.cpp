#include "capkit/recurrent.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"
#include "capkit/random.hpp"

namespace capkit {
namespace {

constexpr std::string_view kGrlmMagic = "GRLM";
constexpr std::uint32_t kGrlmVersion = 1;

VectorXd sigmoid(const VectorXd& v) {
  return v.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

VectorXd log_softmax(const VectorXd& v) {
  double mx = v.maxCoeff();
  double lse = mx + std::log((v.array() - mx).exp().sum());
  return v.array() - lse;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::DimensionMismatch, what);
}

// Intermediate values of one recurrence step, kept for backpropagation.
struct StepCache {
  TokenId prev = kStartId;
  CoverageSet remaining;
  VectorXd x, h_prev, z, r, c, h, aux;
  VectorXd probs;  // over outputs (token id - 1)
  TokenId target = kEndId;
};

}  // namespace

GruWeights GruWeights::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  auto in = static_cast<Eigen::Index>(input_dim), hd = static_cast<Eigen::Index>(hidden_dim);
  GruWeights w;
  w.Wz = w.Wr = w.Wh = MatrixXd::Zero(hd, in);
  w.Uz = w.Ur = w.Uh = MatrixXd::Zero(hd, hd);
  w.bz = w.br = w.bh = VectorXd::Zero(hd);
  return w;
}

VectorXd gru_cell(const VectorXd& x, const VectorXd& h, const GruWeights& w) {
  require(w.Wz.cols() == x.size() && w.Wr.cols() == x.size() && w.Wh.cols() == x.size(),
          "gru_cell: input size does not match W");
  require(w.Uz.rows() == h.size() && w.Uz.cols() == h.size() && w.Ur.cols() == h.size() &&
              w.Uh.cols() == h.size() && w.Wz.rows() == h.size() && w.bz.size() == h.size() &&
              w.br.size() == h.size() && w.bh.size() == h.size(),
          "gru_cell: hidden size does not match U/b");
  VectorXd z = sigmoid(w.Wz * x + w.Uz * h + w.bz);
  VectorXd r = sigmoid(w.Wr * x + w.Ur * h + w.br);
  VectorXd c = (w.Wh * x + w.Uh * r.cwiseProduct(h) + w.bh).array().tanh().matrix();
  return (VectorXd::Ones(h.size()) - z).cwiseProduct(h) + z.cwiseProduct(c);
}

RecurrentParams RecurrentParams::zeros_like() const {
  RecurrentParams z = *this;
  z.for_each([](std::string_view, auto& t) { t.setZero(); });
  return z;
}

double RecurrentParams::squared_norm() const {
  double s = 0.0;
  for_each([&](std::string_view, const auto& t) { s += t.squaredNorm(); });
  return s;
}

bool RecurrentParams::all_finite() const {
  bool ok = true;
  for_each([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

std::size_t RecurrentParams::count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

RecurrentLM::RecurrentLM(Vocabulary vocab, ConditioningMode mode, RecurrentDims dims, std::uint64_t seed,
                         double init_scale)
    : vocab_(std::move(vocab)), mode_(mode), dims_(dims) {
  if (dims.embed == 0 || dims.hidden == 0) throw Error(Errc::InvalidArgument, "recurrent dims must be positive");
  if (mode == ConditioningMode::InitialState && dims.feature == 0) {
    throw Error(Errc::InvalidArgument, "initial-state mode needs a feature dimension");
  }
  if (mode == ConditioningMode::AuxiliaryVector) dims_.feature = 0;

  using Idx = Eigen::Index;
  const Idx v = static_cast<Idx>(vocab_.size()), e = static_cast<Idx>(dims_.embed),
            h = static_cast<Idx>(dims_.hidden), f = static_cast<Idx>(dims_.feature);
  auto& p = params_;
  p.embed = MatrixXd::Zero(v, e);
  if (mode == ConditioningMode::InitialState) {
    p.image_proj = MatrixXd::Zero(h, f);
    p.image_bias = VectorXd::Zero(h);
    p.detector = MatrixXd::Zero(0, h);
    p.aux_word = MatrixXd::Zero(h, 0);
    p.aux_recurrent = MatrixXd::Zero(0, h);
    p.gru = GruWeights::zeros(dims_.embed, dims_.hidden);
  } else {
    p.image_proj = MatrixXd::Zero(h, 0);
    p.image_bias = VectorXd::Zero(0);
    p.detector = MatrixXd::Zero(v, h);
    p.aux_word = MatrixXd::Zero(h, e);
    p.aux_recurrent = MatrixXd::Zero(h, h);
    p.gru = GruWeights::zeros(dims_.embed + dims_.hidden, dims_.hidden);
  }
  p.out = MatrixXd::Zero(v - 1, h);
  p.out_bias = VectorXd::Zero(v - 1);

  Rng rng(seed);
  p.for_each([&](std::string_view, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = uniform_real(rng, -init_scale, init_scale);
  });
}

void RecurrentLM::check(const Conditioning& cond, std::span<const TokenId> tokens) const {
  if (mode_ == ConditioningMode::InitialState) {
    require(cond.image.size() == dims_.feature, "image vector has " + std::to_string(cond.image.size()) +
                                                    " values, model expects " + std::to_string(dims_.feature));
  }
  for (auto t : tokens) {
    if (t == kStartId || t == kEndId || t >= vocab_.size()) {
      throw Error(Errc::UnknownToken, "caption token id " + std::to_string(t) + " invalid for this model");
    }
  }
  for (auto d : cond.detections) {
    if (d >= vocab_.size()) throw Error(Errc::UnknownToken, "detection id " + std::to_string(d) + " out of range");
  }
}

VectorXd RecurrentLM::initial_state(const Conditioning& cond) const {
  if (mode_ == ConditioningMode::AuxiliaryVector) return VectorXd::Zero(static_cast<Eigen::Index>(dims_.hidden));
  require(cond.image.size() == dims_.feature, "image vector length mismatch");
  Eigen::Map<const VectorXd> f(cond.image.data(), static_cast<Eigen::Index>(cond.image.size()));
  return (params_.image_proj * f + params_.image_bias).array().tanh().matrix();
}

namespace {

// Shared by inference and training; fills `cache` when non-null.
VectorXd advance_impl(const RecurrentParams& p, ConditioningMode mode, const VectorXd& h, TokenId prev,
                      const CoverageSet& remaining, StepCache* cache) {
  VectorXd e = p.embed.row(prev).transpose();
  VectorXd x;
  VectorXd aux;
  if (mode == ConditioningMode::AuxiliaryVector) {
    VectorXd pre = p.aux_word * e + p.aux_recurrent * h;
    for (auto v : remaining) pre += p.detector.row(v).transpose();
    aux = sigmoid(pre);
    x.resize(e.size() + aux.size());
    x << e, aux;
  } else {
    x = std::move(e);
  }
  const auto& g = p.gru;
  VectorXd z = sigmoid(g.Wz * x + g.Uz * h + g.bz);
  VectorXd r = sigmoid(g.Wr * x + g.Ur * h + g.br);
  VectorXd c = (g.Wh * x + g.Uh * r.cwiseProduct(h) + g.bh).array().tanh().matrix();
  VectorXd out = h + z.cwiseProduct(c - h);
  if (cache) {
    cache->prev = prev;
    cache->remaining = remaining;
    cache->x = std::move(x);
    cache->h_prev = h;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->c = std::move(c);
    cache->h = out;
    cache->aux = std::move(aux);
  }
  return out;
}

}  // namespace

VectorXd RecurrentLM::advance(const VectorXd& h, TokenId prev, const CoverageSet& remaining) const {
  if (prev >= vocab_.size()) throw Error(Errc::UnknownToken, "token id out of range");
  return advance_impl(params_, mode_, h, prev, remaining, nullptr);
}

VectorXd RecurrentLM::log_probs(const VectorXd& h) const {
  VectorXd lp = log_softmax(params_.out * h + params_.out_bias);
  VectorXd full(static_cast<Eigen::Index>(vocab_.size()));
  full(0) = -std::numeric_limits<double>::infinity();
  full.tail(lp.size()) = lp;
  return full;
}

ForwardResult RecurrentLM::forward(const Conditioning& cond, std::span<const TokenId> tokens) const {
  check(cond, tokens);
  ForwardResult res;
  VectorXd h = initial_state(cond);
  CoverageSet remaining = cond.detections;
  TokenId prev = kStartId;
  for (std::size_t t = 0; t <= tokens.size(); ++t) {
    TokenId target = t < tokens.size() ? tokens[t] : kEndId;
    h = advance_impl(params_, mode_, h, prev, remaining, nullptr);
    VectorXd lp = log_probs(h);
    res.log_prob += lp(target);
    res.probs.push_back(lp.array().exp().matrix());
    res.probs.back()(kStartId) = 0.0;  // vectorized exp leaves a denormal
    res.hidden.push_back(h);
    if (t < tokens.size()) remaining = coverage_without(remaining, target);
    prev = target;
  }
  return res;
}

LossAndGradient RecurrentLM::loss_and_gradients(std::span<const RecurrentExample> batch) const {
  if (batch.empty()) throw Error(Errc::InvalidArgument, "loss_and_gradients on an empty batch");
  LossAndGradient res;
  res.grad = params_.zeros_like();
  auto& gp = res.grad;
  const auto& p = params_;
  const auto& g = p.gru;
  const auto embed = static_cast<Eigen::Index>(dims_.embed);
  std::size_t predicted = 0;
  double nll = 0.0;
  std::vector<StepCache> steps;

  for (const auto& ex : batch) {
    check(ex.conditioning, ex.tokens);
    steps.clear();
    VectorXd h0 = initial_state(ex.conditioning);
    VectorXd h = h0;
    CoverageSet remaining = ex.conditioning.detections;
    TokenId prev = kStartId;
    for (std::size_t t = 0; t <= ex.tokens.size(); ++t) {
      auto& sc = steps.emplace_back();
      sc.target = t < ex.tokens.size() ? ex.tokens[t] : kEndId;
      h = advance_impl(p, mode_, h, prev, remaining, &sc);
      VectorXd lp = log_softmax(p.out * h + p.out_bias);
      nll -= lp(sc.target - 1);
      sc.probs = lp.array().exp().matrix();
      if (t < ex.tokens.size()) remaining = coverage_without(remaining, sc.target);
      prev = sc.target;
    }
    predicted += steps.size();

    VectorXd dh_next = VectorXd::Zero(h.size());
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
      const auto& sc = *it;
      VectorXd dlogits = sc.probs;
      dlogits(sc.target - 1) -= 1.0;
      gp.out.noalias() += dlogits * sc.h.transpose();
      gp.out_bias += dlogits;
      VectorXd dh = p.out.transpose() * dlogits + dh_next;

      VectorXd dz = dh.cwiseProduct(sc.c - sc.h_prev);
      VectorXd dc = dh.cwiseProduct(sc.z);
      VectorXd dh_prev = dh.cwiseProduct(VectorXd::Ones(dh.size()) - sc.z);

      VectorXd dpc = dc.cwiseProduct((1.0 - sc.c.array().square()).matrix());
      VectorXd rh = sc.r.cwiseProduct(sc.h_prev);
      gp.gru.Wh.noalias() += dpc * sc.x.transpose();
      gp.gru.Uh.noalias() += dpc * rh.transpose();
      gp.gru.bh += dpc;
      VectorXd drh = g.Uh.transpose() * dpc;
      VectorXd dr = drh.cwiseProduct(sc.h_prev);
      dh_prev += drh.cwiseProduct(sc.r);
      VectorXd dx = g.Wh.transpose() * dpc;

      VectorXd dpz = dz.cwiseProduct((sc.z.array() * (1.0 - sc.z.array())).matrix());
      gp.gru.Wz.noalias() += dpz * sc.x.transpose();
      gp.gru.Uz.noalias() += dpz * sc.h_prev.transpose();
      gp.gru.bz += dpz;
      dx.noalias() += g.Wz.transpose() * dpz;
      dh_prev.noalias() += g.Uz.transpose() * dpz;

      VectorXd dpr = dr.cwiseProduct((sc.r.array() * (1.0 - sc.r.array())).matrix());
      gp.gru.Wr.noalias() += dpr * sc.x.transpose();
      gp.gru.Ur.noalias() += dpr * sc.h_prev.transpose();
      gp.gru.br += dpr;
      dx.noalias() += g.Wr.transpose() * dpr;
      dh_prev.noalias() += g.Ur.transpose() * dpr;

      VectorXd de = dx.head(embed);
      if (mode_ == ConditioningMode::AuxiliaryVector) {
        VectorXd da = dx.tail(dx.size() - embed);
        VectorXd dpre = da.cwiseProduct((sc.aux.array() * (1.0 - sc.aux.array())).matrix());
        gp.aux_word.noalias() += dpre * sc.x.head(embed).transpose();
        de.noalias() += p.aux_word.transpose() * dpre;
        for (auto v : sc.remaining) gp.detector.row(v) += dpre.transpose();
        gp.aux_recurrent.noalias() += dpre * sc.h_prev.transpose();
        dh_prev.noalias() += p.aux_recurrent.transpose() * dpre;
      }
      gp.embed.row(sc.prev) += de.transpose();
      dh_next = std::move(dh_prev);
    }

    if (mode_ == ConditioningMode::InitialState) {
      Eigen::Map<const VectorXd> f(ex.conditioning.image.data(),
                                   static_cast<Eigen::Index>(ex.conditioning.image.size()));
      VectorXd dpre = dh_next.cwiseProduct((1.0 - h0.array().square()).matrix());
      gp.image_proj.noalias() += dpre * f.transpose();
      gp.image_bias += dpre;
    }
  }

  const double inv = 1.0 / static_cast<double>(predicted);
  res.loss = nll * inv;
  gp.for_each([&](std::string_view, auto& t) { t *= inv; });
  if (!std::isfinite(res.loss)) throw Error(Errc::NonFiniteLoss, "recurrent LM loss is not finite");
  return res;
}

double RecurrentLM::loss(std::span<const RecurrentExample> batch) const {
  if (batch.empty()) throw Error(Errc::InvalidArgument, "loss on an empty batch");
  double nll = 0.0;
  std::size_t predicted = 0;
  for (const auto& ex : batch) {
    nll -= forward(ex.conditioning, ex.tokens).log_prob;
    predicted += ex.tokens.size() + 1;
  }
  double l = nll / static_cast<double>(predicted);
  if (!std::isfinite(l)) throw Error(Errc::NonFiniteLoss, "recurrent LM loss is not finite");
  return l;
}

RecurrentLM train_recurrent(RecurrentLM lm, std::span<const RecurrentExample> data,
                            const RecurrentTrainConfig& config, std::vector<double>* epoch_losses) {
  if (data.empty()) throw Error(Errc::DegenerateCorpus, "no recurrent training examples");
  if (!(config.learning_rate >= 0.0)) throw Error(Errc::InvalidArgument, "learning rate must be >= 0");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  if (epoch_losses) epoch_losses->clear();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_in_place(std::span(order), rng);
    for (auto i : order) {
      auto lg = lm.loss_and_gradients(data.subspan(i, 1));
      double scale = config.learning_rate;
      if (config.clip > 0.0) {
        double norm = std::sqrt(lg.grad.squared_norm());
        if (norm > config.clip) scale *= config.clip / norm;
      }
      if (scale == 0.0) continue;
      std::vector<double*> targets;
      std::vector<const double*> grads;
      std::vector<Eigen::Index> sizes;
      lm.mutable_params().for_each([&](std::string_view, auto& t) {
        targets.push_back(t.data());
        sizes.push_back(t.size());
      });
      lg.grad.for_each([&](std::string_view, const auto& t) { grads.push_back(t.data()); });
      for (std::size_t k = 0; k < targets.size(); ++k) {
        for (Eigen::Index j = 0; j < sizes[k]; ++j) targets[k][j] -= scale * grads[k][j];
      }
    }
    if (!lm.params().all_finite()) throw Error(Errc::NonFiniteLoss, "recurrent training diverged");
    if (epoch_losses) epoch_losses->push_back(lm.loss(data));
  }
  return lm;
}

Conditioning conditioning_for(ImageId id, ConditioningMode mode, const Vocabulary& vocab,
                              const FeatureStore* features,
                              const std::map<ImageId, DetectionSet>* detections) {
  Conditioning c;
  if (mode == ConditioningMode::InitialState) {
    if (!features) throw Error(Errc::InvalidArgument, "initial-state conditioning needs image features");
    auto row = features->at(id);
    c.image.assign(row.begin(), row.end());
  } else {
    if (!detections) throw Error(Errc::InvalidArgument, "auxiliary conditioning needs detections");
    auto it = detections->find(id);
    if (it == detections->end()) throw Error(Errc::InvalidArgument, "no detections for image " + std::to_string(id));
    c.detections = resolve_coverage(it->second, vocab);
  }
  return c;
}

std::vector<RecurrentExample> make_recurrent_examples(std::span<const CaptionRecord> records,
                                                      const Vocabulary& vocab, ConditioningMode mode,
                                                      const FeatureStore* features,
                                                      const std::map<ImageId, DetectionSet>* detections) {
  std::vector<RecurrentExample> out;
  for (const auto& r : records) {
    bool available = mode == ConditioningMode::InitialState ? (features && features->contains(r.image_id))
                                                            : (detections && detections->count(r.image_id));
    if (!available) continue;
    out.push_back({conditioning_for(r.image_id, mode, vocab, features, detections), vocab.encode(r.tokens)});
  }
  return out;
}

std::string RecurrentLM::serialize() const {
  ByteWriter out;
  out.put_bytes(kGrlmMagic);
  out.put_u32(kGrlmVersion);
  out.put_u32(static_cast<std::uint32_t>(mode_));
  out.put_u32(static_cast<std::uint32_t>(dims_.embed));
  out.put_u32(static_cast<std::uint32_t>(dims_.hidden));
  out.put_u32(static_cast<std::uint32_t>(dims_.feature));
  vocab_.write(out);
  params_.for_each([&](std::string_view name, const auto& t) {
    out.put_string(name);
    out.put_u32(static_cast<std::uint32_t>(t.rows()));
    out.put_u32(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) out.put_f64(t.data()[i]);
  });
  return out.release();
}

RecurrentLM RecurrentLM::deserialize(std::string_view bytes) {
  ByteReader in(bytes, "GRLM");
  if (in.get_bytes(4) != kGrlmMagic) throw Error(Errc::MalformedInput, "GRLM: bad magic");
  if (auto v = in.get_u32(); v != kGrlmVersion) {
    throw Error(Errc::MalformedInput, "GRLM: unsupported version " + std::to_string(v));
  }
  auto mode = in.get_u32();
  if (mode > 1) throw Error(Errc::MalformedInput, "GRLM: unknown conditioning mode");
  RecurrentDims dims;
  dims.embed = in.get_u32();
  dims.hidden = in.get_u32();
  dims.feature = in.get_u32();
  auto vocab = Vocabulary::read(in);
  RecurrentLM lm(std::move(vocab), static_cast<ConditioningMode>(mode), dims, 0);
  lm.params_.for_each([&](std::string_view name, auto& t) {
    if (in.get_string() != name) throw Error(Errc::MalformedInput, "GRLM: expected tensor " + std::string(name));
    auto rows = in.get_u32(), cols = in.get_u32();
    if (rows != t.rows() || cols != t.cols()) {
      throw Error(Errc::MalformedInput, "GRLM: tensor " + std::string(name) + " has wrong shape");
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      double x = in.get_f64();
      if (!std::isfinite(x)) throw Error(Errc::MalformedInput, "GRLM: non-finite parameter");
      t.data()[i] = x;
    }
  });
  if (!in.at_end()) throw Error(Errc::MalformedInput, "GRLM: trailing bytes");
  return lm;
}

void RecurrentLM::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

RecurrentLM RecurrentLM::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

RecurrentScorer::RecurrentScorer(const RecurrentLM& lm, Conditioning cond) : lm_(lm) {
  VectorXd h0 = lm.initial_state(cond);
  initial_.assign(h0.data(), h0.data() + h0.size());
}

void RecurrentScorer::step(const ScorerState& state, std::span<const TokenId> prefix, const CoverageSet& remaining,
                           std::vector<double>& log_probs, ScorerState& next) const {
  Eigen::Map<const VectorXd> h(state.data(), static_cast<Eigen::Index>(state.size()));
  TokenId prev = prefix.empty() ? kStartId : prefix.back();
  VectorXd h_next = lm_.advance(h, prev, remaining);
  VectorXd lp = lm_.log_probs(h_next);
  log_probs.assign(lp.data(), lp.data() + lp.size());
  next.assign(h_next.data(), h_next.data() + h_next.size());
}

}  // namespace capkit
