#include "xg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace xg::nn {

bool operator==(const ArchSpec& a, const ArchSpec& b) {
  return a.family == b.family && a.stage_widths == b.stage_widths &&
         a.blocks_per_stage == b.blocks_per_stage && a.activation == b.activation &&
         a.softplus_beta == b.softplus_beta && a.num_classes == b.num_classes &&
         a.in_channels == b.in_channels && a.image_side == b.image_side &&
         a.with_norm == b.with_norm;
}

namespace {

Tensor he_uniform(Shape shape, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -limit, limit, rng, true);
}

ConvUnit make_conv(int cin, int cout, int k, int pad, Rng& rng) {
  ConvUnit c;
  c.w = he_uniform({cout, cin, k, k}, cin * k * k, rng);
  c.b = Tensor::zeros({cout}, true);
  c.stride = 1;
  c.pad = pad;
  return c;
}

NormSite make_norm(int channels) {
  NormSite s;
  s.bn.gamma = Tensor::from(std::vector<double>(static_cast<size_t>(channels), 1.0),
                            {channels}, true);
  s.bn.beta = Tensor::zeros({channels}, true);
  s.bn.running_mean = Tensor::zeros({channels});
  s.bn.running_var = Tensor::from(std::vector<double>(static_cast<size_t>(channels), 1.0),
                                  {channels});
  return s;
}

Tensor avgpool2(const Tensor& x) {
  const int M = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ConfigError("avgpool2: spatial size must be even");
  Tensor r = reshape(x, {M, C, H / 2, 2, W / 2, 2});
  return reduce_mean(r, {3, 5}, false);
}

}  // namespace

Tensor bn_forward_train(BatchNorm2d& layer, const Tensor& z) {
  if (z.rank() != 4) throw ShapeError("bn_forward_train: need [M,C,H,W]");
  const int C = z.dim(1);
  if (C != layer.gamma.dim(0))
    throw ShapeError("bn_forward_train: channel count " + std::to_string(C) +
                     " does not match gamma length " + std::to_string(layer.gamma.dim(0)));
  Tensor mu = reduce_mean(z, {0, 2, 3}, true);
  Tensor var = reduce_var(z, {0, 2, 3}, true);
  Tensor zn = div(sub(z, mu), sqrt_(add_scalar(var, layer.epsilon)));
  Tensor out = add(mul(zn, reshape(layer.gamma, {1, C, 1, 1})),
                   reshape(layer.beta, {1, C, 1, 1}));

  const double m = layer.momentum;
  auto& rm = layer.running_mean.mutable_data();
  auto& rv = layer.running_var.mutable_data();
  const auto& bm = mu.data();
  const auto& bv = var.data();
  for (int c = 0; c < C; ++c) {
    rm[static_cast<size_t>(c)] = m * rm[static_cast<size_t>(c)] + (1.0 - m) * bm[static_cast<size_t>(c)];
    rv[static_cast<size_t>(c)] = m * rv[static_cast<size_t>(c)] + (1.0 - m) * bv[static_cast<size_t>(c)];
  }
  layer.stats_ready = true;
  return out;
}

Tensor bn_forward_eval(const BatchNorm2d& layer, const Tensor& z) {
  if (z.rank() != 4) throw ShapeError("bn_forward_eval: need [M,C,H,W]");
  const int C = z.dim(1);
  if (C != layer.gamma.dim(0))
    throw ShapeError("bn_forward_eval: channel count " + std::to_string(C) +
                     " does not match gamma length " + std::to_string(layer.gamma.dim(0)));
  if (!layer.stats_ready)
    throw Error("bn_forward_eval: running statistics uninitialized (layer never trained)");
  Tensor rm = reshape(layer.running_mean, {1, C, 1, 1});
  Tensor rv = reshape(layer.running_var, {1, C, 1, 1});
  Tensor zn = div(sub(z, rm), sqrt_(add_scalar(rv, layer.epsilon)));
  return add(mul(zn, reshape(layer.gamma, {1, C, 1, 1})), reshape(layer.beta, {1, C, 1, 1}));
}

Tensor cfn_forward(const CFNLayer& layer, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("cfn_forward: need [M,C,H,W]");
  Tensor mu = reduce_mean(x, {0, 2, 3}, true);
  Tensor var = reduce_var(x, {0, 2, 3}, true);
  return div(sub(x, mu), sqrt_(add_scalar(var, layer.epsilon)));
}

namespace {

Tensor apply_act(const Tensor& h, const ArchSpec& arch) {
  return arch.activation == Activation::ReLU ? relu(h) : softplus(h, arch.softplus_beta);
}

}  // namespace

Tensor Model::forward(const Tensor& x, Mode mode, NormOverride ov, TapMap* taps) {
  if (x.rank() != 4) throw ShapeError("Model::forward: need [M,C,H,W]");
  if (x.dim(1) != arch.in_channels)
    throw ShapeError("Model::forward: expected " + std::to_string(arch.in_channels) +
                     " input channels, got " + std::to_string(x.dim(1)));

  auto norm = [&](NormSite& site, const Tensor& z) -> Tensor {
    if (!arch.with_norm) return z;
    if (ov == NormOverride::Bypass) return z;
    if (ov == NormOverride::ForceCFN || norm_mode == NormMode::CFN)
      return cfn_forward(CFNLayer{site.bn.epsilon}, z);
    return mode == Mode::Train ? bn_forward_train(site.bn, z) : bn_forward_eval(site.bn, z);
  };
  auto tap = [&](const std::string& name, const Tensor& t) {
    if (taps) (*taps)[name] = t;
  };

  if (arch.family == ArchFamily::TinyResNet) {
    Tensor h = conv2d(x, stem.w, stem.b, stem.stride, stem.pad);
    h = apply_act(norm(stem_norm, h), arch);
    tap("stem.out", h);
    for (size_t si = 0; si < stages.size(); ++si) {
      for (size_t bi = 0; bi < stages[si].size(); ++bi) {
        ResBlock& blk = stages[si][bi];
        Tensor in = blk.downsample ? avgpool2(h) : h;
        Tensor m1 = apply_act(norm(blk.n1, conv2d(in, blk.conv1.w, blk.conv1.b, 1, blk.conv1.pad)),
                              arch);
        Tensor m2 = norm(blk.n2, conv2d(m1, blk.conv2.w, blk.conv2.b, 1, blk.conv2.pad));
        Tensor sc = blk.has_proj
                        ? norm(blk.nproj, conv2d(in, blk.proj.w, blk.proj.b, 1, 0))
                        : in;
        h = apply_act(add(m2, sc), arch);
        tap("stage" + std::to_string(si + 1) + ".block" + std::to_string(bi) + ".out", h);
      }
    }
    Tensor pooled = global_avg_pool(h);
    return linear(pooled, fc_w, fc_b);
  }

  // tiny-vgg
  Tensor h = x;
  for (size_t i = 0; i < vgg_convs.size(); ++i) {
    h = conv2d(h, vgg_convs[i].w, vgg_convs[i].b, 1, vgg_convs[i].pad);
    if (arch.with_norm) h = norm(vgg_norms[i], h);
    h = apply_act(h, arch);
    tap("conv" + std::to_string(i + 1) + ".out", h);
    h = maxpool2d(h, 2, 2);
  }
  const int feat = h.dim(1) * h.dim(2) * h.dim(3);
  h = reshape(h, {h.dim(0), feat});
  h = apply_act(linear(h, fc1_w, fc1_b), arch);
  return linear(h, fc_w, fc_b);
}

namespace {

void push_conv(std::vector<NamedTensor>& out, const std::string& prefix, const ConvUnit& c) {
  out.push_back({prefix + ".w", kKindConvW, c.w});
  out.push_back({prefix + ".b", kKindConvB, c.b});
}

void push_norm(std::vector<NamedTensor>& out, const std::string& prefix, const NormSite& s) {
  out.push_back({prefix + ".gamma", kKindBnGamma, s.bn.gamma});
  out.push_back({prefix + ".beta", kKindBnBeta, s.bn.beta});
  out.push_back({prefix + ".running_mean", kKindBnMean, s.bn.running_mean});
  out.push_back({prefix + ".running_var", kKindBnVar, s.bn.running_var});
}

}  // namespace

std::vector<NamedTensor> Model::entries() const {
  std::vector<NamedTensor> out;
  if (arch.family == ArchFamily::TinyResNet) {
    push_conv(out, "stem.conv", stem);
    if (arch.with_norm) push_norm(out, "stem.bn", stem_norm);
    for (size_t si = 0; si < stages.size(); ++si)
      for (size_t bi = 0; bi < stages[si].size(); ++bi) {
        const ResBlock& blk = stages[si][bi];
        const std::string p = "stage" + std::to_string(si + 1) + ".block" + std::to_string(bi);
        push_conv(out, p + ".conv1", blk.conv1);
        if (arch.with_norm) push_norm(out, p + ".bn1", blk.n1);
        push_conv(out, p + ".conv2", blk.conv2);
        if (arch.with_norm) push_norm(out, p + ".bn2", blk.n2);
        if (blk.has_proj) {
          push_conv(out, p + ".proj", blk.proj);
          if (arch.with_norm) push_norm(out, p + ".bnp", blk.nproj);
        }
      }
  } else {
    for (size_t i = 0; i < vgg_convs.size(); ++i) {
      const std::string p = "conv" + std::to_string(i + 1);
      push_conv(out, p, vgg_convs[i]);
      if (arch.with_norm) push_norm(out, p + ".bn", vgg_norms[i]);
    }
    out.push_back({"head.fc1.w", kKindLinW, fc1_w});
    out.push_back({"head.fc1.b", kKindLinB, fc1_b});
  }
  out.push_back({"head.fc.w", kKindLinW, fc_w});
  out.push_back({"head.fc.b", kKindLinB, fc_b});
  return out;
}

std::vector<Tensor> Model::trainable_params(NormOverride ov) const {
  const bool bn_learn = arch.with_norm && norm_mode == NormMode::BatchLearned &&
                        ov == NormOverride::None;
  std::vector<Tensor> out;
  for (const auto& e : entries()) {
    if (e.kind == kKindBnMean || e.kind == kKindBnVar) continue;
    if ((e.kind == kKindBnGamma || e.kind == kKindBnBeta) && !bn_learn) continue;
    out.push_back(e.t);
  }
  return out;
}

std::vector<NormSite*> Model::norm_sites() {
  std::vector<NormSite*> out;
  if (!arch.with_norm) return out;
  if (arch.family == ArchFamily::TinyResNet) {
    out.push_back(&stem_norm);
    for (auto& st : stages)
      for (auto& blk : st) {
        out.push_back(&blk.n1);
        out.push_back(&blk.n2);
        if (blk.has_proj) out.push_back(&blk.nproj);
      }
  } else {
    for (auto& n : vgg_norms) out.push_back(&n);
  }
  return out;
}

std::vector<const NormSite*> Model::norm_sites() const {
  auto sites = const_cast<Model*>(this)->norm_sites();
  return {sites.begin(), sites.end()};
}

bool Model::stats_ready() const {
  for (const auto* s : norm_sites())
    if (!s->bn.stats_ready) return false;
  return true;
}

void Model::mark_stats_ready(bool ready) {
  for (auto* s : norm_sites()) s->bn.stats_ready = ready;
}

std::string Model::default_target_layer() const {
  auto names = tap_names();
  if (names.empty()) throw Error("model exposes no activation taps");
  return names.back();
}

std::vector<std::string> Model::tap_names() const {
  std::vector<std::string> out;
  if (arch.family == ArchFamily::TinyResNet) {
    out.push_back("stem.out");
    for (size_t si = 0; si < stages.size(); ++si)
      for (size_t bi = 0; bi < stages[si].size(); ++bi)
        out.push_back("stage" + std::to_string(si + 1) + ".block" + std::to_string(bi) + ".out");
  } else {
    for (size_t i = 0; i < vgg_convs.size(); ++i)
      out.push_back("conv" + std::to_string(i + 1) + ".out");
  }
  return out;
}

size_t Model::parameter_count() const {
  size_t n = 0;
  for (const auto& e : entries())
    if (e.kind != kKindBnMean && e.kind != kKindBnVar) n += e.t.numel();
  return n;
}

void Model::zero_grad() {
  for (const auto& e : entries()) e.t.node->grad.clear();
}

Model build_model(const ArchSpec& spec, uint64_t seed) {
  if (spec.stage_widths.empty()) throw ConfigError("arch: stage_widths must be non-empty");
  for (int w : spec.stage_widths)
    if (w <= 0) throw ConfigError("arch: stage widths must be positive");
  if (spec.blocks_per_stage <= 0) throw ConfigError("arch: blocks_per_stage must be positive");
  if (spec.num_classes < 2) throw ConfigError("arch: need at least 2 classes");
  if (spec.in_channels <= 0) throw ConfigError("arch: in_channels must be positive");
  if (spec.softplus_beta <= 0) throw ConfigError("arch: softplus_beta must be positive");

  Model m;
  m.arch = spec;
  m.seed = seed;
  m.norm_mode = spec.with_norm ? NormMode::BatchLearned : NormMode::NoBN;
  Rng rng = Rng::split(seed, "init");

  if (spec.family == ArchFamily::TinyResNet) {
    const int down = static_cast<int>(spec.stage_widths.size()) - 1;
    const int div = 1 << down;
    if (spec.image_side % (div * 2) != 0 || spec.image_side < 4 * div)
      throw ConfigError("arch: image_side incompatible with " + std::to_string(down) +
                        " downsampling stages");
    m.stem = make_conv(spec.in_channels, spec.stage_widths[0], 3, 1, rng);
    if (spec.with_norm) m.stem_norm = make_norm(spec.stage_widths[0]);
    int cin = spec.stage_widths[0];
    for (size_t si = 0; si < spec.stage_widths.size(); ++si) {
      const int w = spec.stage_widths[si];
      std::vector<ResBlock> blocks;
      for (int bi = 0; bi < spec.blocks_per_stage; ++bi) {
        ResBlock blk;
        blk.downsample = (si > 0 && bi == 0);
        const int bin = bi == 0 ? cin : w;
        blk.conv1 = make_conv(bin, w, 3, 1, rng);
        blk.conv2 = make_conv(w, w, 3, 1, rng);
        if (spec.with_norm) {
          blk.n1 = make_norm(w);
          blk.n2 = make_norm(w);
        }
        blk.has_proj = (bin != w);
        if (blk.has_proj) {
          blk.proj = make_conv(bin, w, 1, 0, rng);
          if (spec.with_norm) blk.nproj = make_norm(w);
        }
        blocks.push_back(std::move(blk));
      }
      m.stages.push_back(std::move(blocks));
      cin = w;
    }
    m.fc_w = he_uniform({spec.num_classes, cin}, cin, rng);
    m.fc_b = Tensor::zeros({spec.num_classes}, true);
  } else {
    const int nblocks = static_cast<int>(spec.stage_widths.size());
    const int div = 1 << nblocks;
    if (spec.image_side % div != 0)
      throw ConfigError("arch: image_side must be divisible by 2^" + std::to_string(nblocks));
    int cin = spec.in_channels;
    for (int w : spec.stage_widths) {
      m.vgg_convs.push_back(make_conv(cin, w, 3, 1, rng));
      if (spec.with_norm) m.vgg_norms.push_back(make_norm(w));
      cin = w;
    }
    const int side = spec.image_side / div;
    const int feat = cin * side * side;
    const int hidden = 128;
    m.fc1_w = he_uniform({hidden, feat}, feat, rng);
    m.fc1_b = Tensor::zeros({hidden}, true);
    m.fc_w = he_uniform({spec.num_classes, hidden}, hidden, rng);
    m.fc_b = Tensor::zeros({spec.num_classes}, true);
  }
  return m;
}

void set_norm_mode(Model& m, NormMode mode) {
  if (mode == NormMode::NoBN) {
    if (m.arch.with_norm)
      throw ConfigError("set_norm_mode: NoBN requested on an architecture with BN sites");
    m.norm_mode = mode;
    return;
  }
  if (!m.arch.with_norm)
    throw ConfigError("set_norm_mode: architecture has no normalization sites");
  m.norm_mode = mode;
  const bool trainable = mode == NormMode::BatchLearned;
  for (auto* s : m.norm_sites()) s->bn.trainable = trainable;
}

Model Model::clone() const { return from_snapshot(snapshot(*this)); }

Snapshot snapshot(const Model& m) {
  Snapshot s;
  s.arch = m.arch;
  s.norm_mode = m.norm_mode;
  s.seed = m.seed;
  s.stats_ready = m.arch.with_norm ? m.stats_ready() : false;
  for (const auto& e : m.entries())
    s.entries.push_back({e.name, e.kind, e.t.shape(), e.t.data()});
  return s;
}

Model from_snapshot(const Snapshot& s) {
  Model m = build_model(s.arch, s.seed);
  auto live = m.entries();
  if (live.size() != s.entries.size())
    throw DataError("snapshot: entry count mismatch (" + std::to_string(s.entries.size()) +
                    " stored vs " + std::to_string(live.size()) + " in architecture)");
  for (size_t i = 0; i < live.size(); ++i) {
    const auto& se = s.entries[i];
    if (se.name != live[i].name)
      throw DataError("snapshot: entry '" + se.name + "' does not match architecture entry '" +
                      live[i].name + "'");
    if (se.shape != live[i].t.shape())
      throw DataError("snapshot: shape mismatch for '" + se.name + "': stored " +
                      shape_str(se.shape) + " vs " + shape_str(live[i].t.shape()));
    live[i].t.mutable_data() = se.values;
  }
  if (s.arch.with_norm) {
    set_norm_mode(m, s.norm_mode);
    if (s.stats_ready) m.mark_stats_ready(true);
  } else if (s.norm_mode != NormMode::NoBN) {
    throw DataError("snapshot: norm mode inconsistent with a norm-free architecture");
  }
  return m;
}

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_f64(std::vector<uint8_t>& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > b.size())
      throw DataError("snapshot: truncated file (need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos) + ", have " + std::to_string(b.size() - pos) + ")");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return b[pos++];
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(b.begin() + static_cast<long>(pos), b.begin() + static_cast<long>(pos + n));
    pos += n;
    return s;
  }
  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metadata_text(const Snapshot& s) {
  std::ostringstream os;
  os << "arch.family = " << family_name(s.arch.family) << "\n";
  os << "arch.widths = ";
  for (size_t i = 0; i < s.arch.stage_widths.size(); ++i)
    os << (i ? "," : "") << s.arch.stage_widths[i];
  os << "\n";
  os << "arch.blocks = " << s.arch.blocks_per_stage << "\n";
  os << "arch.activation = " << activation_name(s.arch.activation) << "\n";
  os << "arch.softplus_beta = " << fmt_double(s.arch.softplus_beta) << "\n";
  os << "arch.classes = " << s.arch.num_classes << "\n";
  os << "arch.in_channels = " << s.arch.in_channels << "\n";
  os << "arch.image_side = " << s.arch.image_side << "\n";
  os << "arch.norm = " << (s.arch.with_norm ? 1 : 0) << "\n";
  os << "norm_mode = " << norm_mode_name(s.norm_mode) << "\n";
  os << "seed = " << s.seed << "\n";
  os << "stats_ready = " << (s.stats_ready ? 1 : 0) << "\n";
  return os.str();
}

void parse_metadata(const std::string& text, Snapshot& s) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError("snapshot metadata: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 3);
    if (key == "arch.family") {
      s.arch.family = family_from_name(val);
    } else if (key == "arch.widths") {
      s.arch.stage_widths.clear();
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ',')) s.arch.stage_widths.push_back(std::stoi(tok));
    } else if (key == "arch.blocks") {
      s.arch.blocks_per_stage = std::stoi(val);
    } else if (key == "arch.activation") {
      s.arch.activation = activation_from_name(val);
    } else if (key == "arch.softplus_beta") {
      s.arch.softplus_beta = std::stod(val);
    } else if (key == "arch.classes") {
      s.arch.num_classes = std::stoi(val);
    } else if (key == "arch.in_channels") {
      s.arch.in_channels = std::stoi(val);
    } else if (key == "arch.image_side") {
      s.arch.image_side = std::stoi(val);
    } else if (key == "arch.norm") {
      s.arch.with_norm = val == "1";
    } else if (key == "norm_mode") {
      s.norm_mode = norm_mode_from_name(val);
    } else if (key == "seed") {
      s.seed = std::stoull(val);
    } else if (key == "stats_ready") {
      s.stats_ready = val == "1";
    } else {
      throw DataError("snapshot metadata: unknown key '" + key + "'");
    }
  }
}

constexpr char kMagic[4] = {'X', 'G', 'W', '1'};
constexpr uint32_t kVersion = 1;

}  // namespace

std::vector<uint8_t> serialize_snapshot(const Snapshot& s) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_string(out, metadata_text(s));
  for (const auto& e : s.entries) {
    put_string(out, e.name);
    out.push_back(e.kind);
    out.push_back(static_cast<uint8_t>(e.shape.size()));
    for (int d : e.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : e.values) put_f64(out, v);
  }
  return out;
}

Snapshot deserialize_snapshot(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError("snapshot: bad magic (not an XGW1 file)");
  Reader r{bytes, 4};
  const uint32_t ver = r.u32();
  if (ver != kVersion)
    throw DataError("snapshot: unsupported version " + std::to_string(ver));
  Snapshot s;
  parse_metadata(r.str(), s);
  while (r.pos < bytes.size()) {
    SnapshotEntry e;
    e.name = r.str();
    e.kind = r.u8();
    const uint8_t rank = r.u8();
    for (int d = 0; d < rank; ++d) e.shape.push_back(static_cast<int>(r.u32()));
    const size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (size_t i = 0; i < n; ++i) e.values[i] = r.f64();
    s.entries.push_back(std::move(e));
  }
  return s;
}

void save_weights(const Model& m, const std::string& path) {
  const auto bytes = serialize_snapshot(snapshot(m));
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("save_weights: cannot open " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    if (!f) throw DataError("save_weights: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("save_weights: rename failed for " + path);
}

Model load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_weights: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return from_snapshot(deserialize_snapshot(bytes));
}

const char* norm_mode_name(NormMode m) {
  switch (m) {
    case NormMode::BatchLearned: return "batch_learned";
    case NormMode::CFN: return "cfn";
    case NormMode::FrozenBN: return "frozen_bn";
    case NormMode::NoBN: return "no_bn";
  }
  return "?";
}

NormMode norm_mode_from_name(const std::string& s) {
  if (s == "batch_learned") return NormMode::BatchLearned;
  if (s == "cfn") return NormMode::CFN;
  if (s == "frozen_bn") return NormMode::FrozenBN;
  if (s == "no_bn") return NormMode::NoBN;
  throw ConfigError("unknown norm mode '" + s + "'");
}

const char* family_name(ArchFamily f) {
  return f == ArchFamily::TinyResNet ? "tiny_resnet" : "tiny_vgg";
}

ArchFamily family_from_name(const std::string& s) {
  if (s == "tiny_resnet") return ArchFamily::TinyResNet;
  if (s == "tiny_vgg") return ArchFamily::TinyVGG;
  throw ConfigError("unknown architecture family '" + s + "'");
}

const char* activation_name(Activation a) {
  return a == Activation::ReLU ? "relu" : "softplus";
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "softplus") return Activation::Softplus;
  throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace xg::nn
