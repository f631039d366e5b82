#include "prom3e/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "prom3e/error.hpp"

namespace prom3e {

// ---------------------------------------------------------------------------
// VisibleSet

VisibleSet VisibleSet::make(std::vector<ModalityId> visible, std::vector<ModalityId> targets) {
  std::sort(visible.begin(), visible.end());
  visible.erase(std::unique(visible.begin(), visible.end()), visible.end());
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  if (visible.empty()) throw UsageError("visible set must not be empty");
  if (targets.empty()) throw UsageError("target set must not be empty");
  return VisibleSet{std::move(visible), std::move(targets)};
}

VisibleSet VisibleSet::with_targets(std::vector<ModalityId> visible, std::size_t modality_count,
                                    bool masked_only) {
  std::vector<ModalityId> targets;
  for (ModalityId m = 0; m < modality_count; ++m) {
    if (!masked_only || std::find(visible.begin(), visible.end(), m) == visible.end()) targets.push_back(m);
  }
  if (targets.empty()) {
    for (ModalityId m = 0; m < modality_count; ++m) targets.push_back(m);
  }
  return make(std::move(visible), std::move(targets));
}

bool VisibleSet::is_visible(ModalityId m) const {
  return std::binary_search(visible.begin(), visible.end(), m);
}

std::string VisibleSet::to_string() const {
  std::string s = "{";
  for (std::size_t i = 0; i < visible.size(); ++i) s += (i ? "," : "") + modality_name(visible[i]);
  return s + "}";
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ModelShape::heads() const { return std::max<std::size_t>(1, encoder_dim / 64); }

namespace {

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = stddev * normal(rng);
  return t;
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> layout(const ModelShape& s) {
  const std::size_t e = s.encoder_dim, f = s.ff_mult * s.encoder_dim;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
  for (std::size_t m = 0; m < s.modality_count(); ++m) {
    const std::string p = "proj." + std::to_string(m) + ".";
    out.push_back({p + "w1", {s.input_dims[m], e}});
    out.push_back({p + "b1", {1, e}});
    out.push_back({p + "w2", {e, e}});
    out.push_back({p + "b2", {1, e}});
    out.push_back({"modality_id." + std::to_string(m), {1, e}});
  }
  out.push_back({"mu_token", {1, e}});
  out.push_back({"sigma_token", {1, e}});
  for (std::size_t r = 0; r < s.registers; ++r) out.push_back({"register." + std::to_string(r), {1, e}});
  for (std::size_t l = 0; l < s.depth; ++l) {
    const std::string p = "block." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gain", {1, e}});
    out.push_back({p + "ln1.bias", {1, e}});
    for (const char* w : {"q", "k", "v", "o"}) {
      out.push_back({p + "w" + w, {e, e}});
      out.push_back({p + "b" + w, {1, e}});
    }
    out.push_back({p + "ln2.gain", {1, e}});
    out.push_back({p + "ln2.bias", {1, e}});
    out.push_back({p + "ff.w1", {e, f}});
    out.push_back({p + "ff.b1", {1, f}});
    out.push_back({p + "ff.w2", {f, e}});
    out.push_back({p + "ff.b2", {1, e}});
  }
  for (std::size_t m = 0; m < s.modality_count(); ++m) {
    const std::string p = "decoder." + std::to_string(m) + ".";
    out.push_back({p + "w1", {e, e}});
    out.push_back({p + "b1", {1, e}});
    out.push_back({p + "w2", {e, s.input_dims[m]}});
    out.push_back({p + "b2", {1, s.input_dims[m]}});
  }
  out.push_back({"alpha", {1, 1}});
  out.push_back({"beta", {1, 1}});
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Only full weight matrices decay.
bool decays(const std::string& name) {
  if (name.rfind("proj.", 0) == 0 || name.rfind("decoder.", 0) == 0) {
    return ends_with(name, ".w1") || ends_with(name, ".w2");
  }
  if (name.rfind("block.", 0) == 0) {
    return ends_with(name, ".wq") || ends_with(name, ".wk") || ends_with(name, ".wv") ||
           ends_with(name, ".wo") || ends_with(name, "ff.w1") || ends_with(name, "ff.w2");
  }
  return false;
}

}  // namespace

ModelParams ModelParams::initialize(const ModelShape& shape, const LossConfig& loss, Rng& rng) {
  if (shape.modality_count() < 1 || shape.encoder_dim == 0 || shape.depth == 0 || shape.ff_mult == 0) {
    throw UsageError("invalid model shape");
  }
  if (shape.encoder_dim % shape.heads() != 0) {
    throw UsageError("encoder_dim must be divisible by the head count");
  }
  ModelParams mp;
  mp.shape_ = shape;
  for (const auto& [name, dims] : layout(shape)) {
    const auto [rows, cols] = dims;
    Param p;
    p.name = name;
    p.decay = decays(name);
    if (name == "alpha") {
      p.value = Tensor::scalar(loss.alpha_init);
    } else if (name == "beta") {
      p.value = Tensor::scalar(loss.beta_init);
    } else if (ends_with(name, ".gain")) {
      p.value = Tensor(rows, cols, 1.0);
    } else if (rows == 1 && (name.find("token") != std::string::npos || name.rfind("register.", 0) == 0 ||
                             name.rfind("modality_id.", 0) == 0)) {
      p.value = gaussian(rows, cols, 0.02, rng);
    } else if (rows == 1) {
      p.value = Tensor(rows, cols);  // bias
    } else {
      p.value = gaussian(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
    }
    mp.params_.push_back(std::move(p));
  }
  return mp;
}

ModelParams ModelParams::from_tensors(const ModelShape& shape, std::vector<Param> params) {
  const auto expect = layout(shape);
  if (params.size() != expect.size()) {
    throw DataError("checkpoint holds " + std::to_string(params.size()) + " tensors, architecture needs " +
                    std::to_string(expect.size()));
  }
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& [name, dims] = expect[i];
    if (params[i].name != name) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " is '" + params[i].name + "', expected '" +
                      name + "'");
    }
    if (params[i].value.rows() != dims.first || params[i].value.cols() != dims.second) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + params[i].value.shape_str());
    }
    params[i].decay = decays(name);
  }
  ModelParams mp;
  mp.shape_ = shape;
  mp.params_ = std::move(params);
  return mp;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::uint64_t ModelParams::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    for (double v : p.value.data()) {
      unsigned char b[8];
      std::memcpy(b, &v, 8);
      for (unsigned char c : b) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

BoundParams bind(Graph& g, const ModelParams& params) {
  BoundParams b;
  b.params = &params;
  b.vars.reserve(params.params().size());
  for (const auto& p : params.params()) b.vars.push_back(g.parameter(p.value));
  return b;
}

// ---------------------------------------------------------------------------
// Forward pieces

namespace {

Var activate(Graph& g, Var x, Activation a) { return a == Activation::gelu ? ops::gelu(g, x) : x; }

Var two_layer(Graph& g, Var x, Var w1, Var b1, Var w2, Var b2, Activation a) {
  Var h = activate(g, ops::add(g, ops::matmul(g, x, w1), b1), a);
  return ops::add(g, ops::matmul(g, h, w2), b2);
}

}  // namespace

TokenSequence assemble_tokens(Graph& g, const BoundParams& p, const Batch& batch, const VisibleSet& vs) {
  const ModelParams& mp = *p.params;
  const ModelShape& s = mp.shape();
  if (vs.visible.empty()) throw UsageError("visible set must not be empty");
  const std::size_t b = batch.size();
  if (b == 0) throw DataError("empty batch");
  if (batch.inputs.size() != s.modality_count()) {
    throw DataError("batch has " + std::to_string(batch.inputs.size()) + " modalities, model expects " +
                    std::to_string(s.modality_count()));
  }
  TokenSequence seq;
  std::vector<Var> toks;
  toks.push_back(ops::broadcast_rows(g, p[mp.mu_token()], b));
  toks.push_back(ops::broadcast_rows(g, p[mp.sigma_token()], b));
  for (std::size_t r = 0; r < s.registers; ++r) toks.push_back(ops::broadcast_rows(g, p[mp.register_token(r)], b));
  for (ModalityId m : vs.visible) {
    if (m >= s.modality_count()) throw UsageError("visible modality " + std::to_string(m) + " out of range");
    const Tensor& x = batch.inputs[m];
    if (x.rows() != b || x.cols() != s.input_dims[m]) {
      throw ShapeError("visible modality " + modality_name(m) + " input is " + x.shape_str() + ", expected [" +
                       std::to_string(b) + "x" + std::to_string(s.input_dims[m]) + "]");
    }
    Var xin = g.constant(x);
    Var h = two_layer(g, xin, p[mp.proj(m, 0)], p[mp.proj(m, 1)], p[mp.proj(m, 2)], p[mp.proj(m, 3)], s.activation);
    Var tok = ops::add(g, h, p[mp.modality_id(m)]);
    seq.projected.push_back(tok);
    toks.push_back(tok);
  }
  seq.count = toks.size();
  seq.tokens = ops::stack_tokens(g, toks);
  return seq;
}

Encoded encode(Graph& g, const BoundParams& p, const TokenSequence& seq) {
  const ModelParams& mp = *p.params;
  const ModelShape& s = mp.shape();
  Var x = seq.tokens;
  for (std::size_t l = 0; l < s.depth; ++l) {
    auto w = [&](std::size_t which) { return p[mp.block(l, which)]; };
    Var a = ops::layer_norm(g, x, w(0), w(1));
    Var q = ops::add(g, ops::matmul(g, a, w(2)), w(3));
    Var k = ops::add(g, ops::matmul(g, a, w(4)), w(5));
    Var v = ops::add(g, ops::matmul(g, a, w(6)), w(7));
    Var o = ops::attention(g, q, k, v, seq.count, s.heads());
    x = ops::add(g, x, ops::add(g, ops::matmul(g, o, w(8)), w(9)));
    Var bn = ops::layer_norm(g, x, w(10), w(11));
    x = ops::add(g, x, two_layer(g, bn, w(12), w(13), w(14), w(15), s.activation));
    if (!g.value(x).all_finite()) {
      throw NumericError("non-finite activations in encoder block " + std::to_string(l));
    }
  }
  Encoded enc;
  enc.hidden = x;
  enc.tokens = seq.count;
  enc.mu = ops::select_token(g, x, seq.count, 0);
  enc.log_var = ops::select_token(g, x, seq.count, 1);
  return enc;
}

Var reparameterize(Graph& g, Var mu, Var log_var, Var epsilon) {
  Var sigma = ops::exp(g, ops::scale(g, log_var, 0.5));
  return ops::add(g, mu, ops::mul(g, sigma, epsilon));
}

Var decode(Graph& g, const BoundParams& p, Var z, ModalityId m) {
  const ModelParams& mp = *p.params;
  if (m >= mp.shape().modality_count()) throw UsageError("decoder modality out of range");
  return two_layer(g, z, p[mp.decoder(m, 0)], p[mp.decoder(m, 1)], p[mp.decoder(m, 2)], p[mp.decoder(m, 3)],
                   mp.shape().activation);
}

ForwardOutput forward(Graph& g, const BoundParams& p, const Batch& batch, const VisibleSet& vs, EpsilonMode mode,
                      Rng* rng, bool shared_epsilon) {
  ForwardOutput out;
  out.sequence = assemble_tokens(g, p, batch, vs);
  out.encoded = encode(g, p, out.sequence);
  const std::size_t b = batch.size(), e = p.params->shape().encoder_dim;
  if (mode == EpsilonMode::sample && rng == nullptr) throw UsageError("sampling forward pass needs an rng");

  Var mean_z;
  Var shared;
  for (ModalityId m : vs.targets) {
    Var z;
    if (mode == EpsilonMode::zero) {
      if (!mean_z.valid()) mean_z = out.encoded.mu;
      z = mean_z;
    } else {
      if (!shared_epsilon || !shared.valid()) {
        Tensor eps(b, e);
        for (double& v : eps.data()) v = normal(*rng);
        Var ev = g.constant(std::move(eps));
        z = reparameterize(g, out.encoded.mu, out.encoded.log_var, ev);
        if (shared_epsilon) shared = z;
      } else {
        z = shared;
      }
    }
    out.reconstructions.push_back(decode(g, p, z, m));
  }
  return out;
}

Inference infer(const ModelParams& params, const Batch& batch, const VisibleSet& vs) {
  Graph g(false);
  BoundParams bp = bind(g, params);
  ForwardOutput f = forward(g, bp, batch, vs, EpsilonMode::zero, nullptr);
  Inference out;
  out.tokens = f.encoded.tokens;
  out.mu = g.value(f.encoded.mu);
  out.log_var = g.value(f.encoded.log_var);
  out.hidden = g.value(f.encoded.hidden);
  for (Var v : f.sequence.projected) out.projected.push_back(g.value(v));
  for (Var v : f.reconstructions) out.reconstructions.push_back(g.value(v));
  return out;
}

Tensor token_rows(const Tensor& hidden, std::size_t tokens, std::size_t index) {
  if (tokens == 0 || hidden.rows() % tokens != 0 || index >= tokens) {
    throw ShapeError("token_rows: cannot take token " + std::to_string(index) + " of " + std::to_string(tokens) +
                     " from " + hidden.shape_str());
  }
  const std::size_t b = hidden.rows() / tokens;
  Tensor out(b, hidden.cols());
  for (std::size_t r = 0; r < b; ++r) {
    auto src = hidden.row_span(r * tokens + index);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

struct Cursor {
  std::string_view bytes;
  std::size_t pos = 0;
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) {
      throw TruncatedError("checkpoint truncated: need " + std::to_string(pos + n) + " bytes, have " +
                           std::to_string(bytes.size()));
    }
  }
};

}  // namespace

ModelShape shape_from_config(const RunConfig& config, const std::vector<std::uint32_t>& input_dims) {
  ModelShape s;
  s.input_dims.assign(input_dims.begin(), input_dims.end());
  s.encoder_dim = config.model.encoder_dim;
  s.depth = config.model.depth;
  s.registers = config.model.registers;
  s.ff_mult = config.model.ff_mult;
  s.activation = config.model.activation;
  return s;
}

std::string serialize_checkpoint(const RunConfig& config, const ModelParams& params) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  const std::string text = config.to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.params().size()));
  for (const auto& p : params.params()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    for (double v : p.value.data()) put<double>(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw BadMagicError("not a checkpoint file: bad magic (expected \"PM3C\")");
  }
  Cursor c{bytes, 4};
  const auto version = c.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto text_len = c.get<std::uint32_t>();
  ck.config.apply_text(c.take(text_len));
  const auto count = c.get<std::uint32_t>();
  std::vector<Param> params;
  std::vector<std::uint32_t> input_dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    Param p;
    const auto nlen = c.get<std::uint16_t>();
    p.name = std::string(c.take(nlen));
    const auto rows = c.get<std::uint32_t>();
    const auto cols = c.get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    auto raw = c.take(n * 8);
    std::vector<double> data(n);
    std::memcpy(data.data(), raw.data(), n * 8);
    p.value = Tensor(rows, cols, std::move(data));
    if (p.name.rfind("proj.", 0) == 0 && p.name.size() > 3 && p.name.ends_with(".w1")) input_dims.push_back(rows);
    params.push_back(std::move(p));
  }
  if (c.pos != bytes.size()) {
    throw FormatError("checkpoint has " + std::to_string(bytes.size() - c.pos) + " trailing bytes");
  }
  if (input_dims.size() != ck.config.synth.modality_count) {
    throw DataError("checkpoint has projectors for " + std::to_string(input_dims.size()) +
                    " modalities, config declares " + std::to_string(ck.config.synth.modality_count));
  }
  ck.params = ModelParams::from_tensors(shape_from_config(ck.config, input_dims), std::move(params));
  return ck;
}

void save_checkpoint(const std::string& path, const RunConfig& config, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_checkpoint(config, params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace prom3e
