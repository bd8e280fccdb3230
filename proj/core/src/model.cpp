#include "khpn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "khpn/errors.hpp"

namespace khpn {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string join_i64(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  size_t pos = 0;
  while (true) {
    size_t c = s.find(',', pos);
    if (c == std::string::npos) {
      parts.push_back(s.substr(pos));
      return parts;
    }
    parts.push_back(s.substr(pos, c - pos));
    pos = c + 1;
  }
}

int64_t parse_i64(const std::string& s, size_t off) {
  try {
    size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size() || s.empty()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config: bad integer '" + s + "'", off);
  }
}

double parse_f64(const std::string& s, size_t off) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || s.empty()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config: bad number '" + s + "'", off);
  }
}

std::vector<int64_t> parse_i64_list(const std::string& s, size_t off) {
  std::vector<int64_t> out;
  for (const auto& p : split_commas(s)) out.push_back(parse_i64(p, off));
  return out;
}

std::vector<double> parse_f64_list(const std::string& s, size_t off) {
  std::vector<double> out;
  for (const auto& p : split_commas(s)) out.push_back(parse_f64(p, off));
  return out;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

int64_t ModelConfig::posture_width() const {
  if (gsp.empty() || gsp.back().widths.empty())
    throw ContractError("ModelConfig: posture stack is empty");
  return gsp.back().widths.back() + 3;
}

int64_t ModelConfig::motion_width() const {
  if (arch == "gsp_only") return 0;
  if (gamma2_widths.empty())
    throw ContractError("ModelConfig: motion kernel widths are empty");
  return gamma2_widths.back();
}

int64_t ModelConfig::embed_width() const {
  return posture_width() + motion_width();
}

int64_t ModelConfig::classifier_input_width() const {
  int64_t w = embed_width();
  for (int64_t s = 0; s < mixer_stacks; ++s)
    w *= static_cast<int64_t>(grouping.branches.size());
  return w;
}

void ModelConfig::check() const {
  if (frames < 1)
    throw ContractError("ModelConfig: frames must be >= 1, got " +
                        std::to_string(frames));
  if (points < 1)
    throw ContractError("ModelConfig: points must be >= 1, got " +
                        std::to_string(points));
  if (classes < 2)
    throw ContractError("ModelConfig: classes must be >= 2, got " +
                        std::to_string(classes));
  if (arch != "full" && arch != "gsp_only")
    throw ContractError("ModelConfig: unknown arch '" + arch + "'");
  if (mixer_stacks < 1)
    throw ContractError("ModelConfig: mixer_stacks must be >= 1, got " +
                        std::to_string(mixer_stacks));
  if (classifier_hidden < 1)
    throw ContractError("ModelConfig: classifier_hidden must be >= 1");
  if (gsp.empty()) throw ContractError("ModelConfig: posture stack is empty");
  if (gsp.back().centroids != 1)
    throw ContractError(
        "ModelConfig: final posture layer must pool to one region, got " +
        std::to_string(gsp.back().centroids));
  int64_t avail = points;
  int64_t feat = 0;
  for (size_t i = 0; i < gsp.size(); ++i) {
    const auto& s = gsp[i];
    if (s.widths.empty())
      throw ContractError("ModelConfig: posture layer " + std::to_string(i) +
                          " has no transform widths");
    if (s.centroids < 1 || s.centroids > avail)
      throw ContractError("ModelConfig: posture layer " + std::to_string(i) +
                          " samples " + std::to_string(s.centroids) +
                          " centroids from " + std::to_string(avail) +
                          " points");
    int64_t grouped = 4 + feat;
    if (s.attention && grouped % s.ratio != 0)
      throw ContractError("ModelConfig: posture layer " + std::to_string(i) +
                          " grouped width " + std::to_string(grouped) +
                          " is not divisible by ratio " +
                          std::to_string(s.ratio));
    avail = s.centroids;
    feat = s.widths.back() + 3;
  }
  if (arch == "full") {
    if (gamma1_widths.empty() || gamma2_widths.empty())
      throw ContractError("ModelConfig: motion kernel widths are empty");
    if (clip.anchors < 1 || clip.anchors > points)
      throw ContractError("ModelConfig: " + std::to_string(clip.anchors) +
                          " motion anchors exceed " + std::to_string(points) +
                          " points");
    if (clip.d_t < 1 || clip.r_t < 0 || clip.K < 1)
      throw ContractError("ModelConfig: bad clip geometry");
    if (!clip.knn_mode && !(clip.r_s > 0.0))
      throw ContractError("ModelConfig: clip radius must be positive");
  }
  if (grouping.branches.empty())
    throw ContractError("ModelConfig: grouping has no branches");
  int64_t cur = frames;
  for (int64_t s = 0; s < mixer_stacks; ++s) {
    int64_t l0 = group_count(cur, grouping.branches[0]);
    for (size_t b = 1; b < grouping.branches.size(); ++b)
      if (group_count(cur, grouping.branches[b]) != l0)
        throw ContractError(
            "ModelConfig: branch group counts diverge at stack " +
            std::to_string(s));
    cur = l0;
  }
}

std::string config_to_text(const ModelConfig& cfg) {
  std::string out;
  auto line = [&out](const std::string& k, const std::string& v) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  };
  line("format", "1");
  line("frames", std::to_string(cfg.frames));
  line("points", std::to_string(cfg.points));
  line("classes", std::to_string(cfg.classes));
  line("arch", cfg.arch);
  line("clip.d_t", std::to_string(cfg.clip.d_t));
  line("clip.r_t", std::to_string(cfg.clip.r_t));
  line("clip.r_s", g17(cfg.clip.r_s));
  line("clip.k", std::to_string(cfg.clip.K));
  line("clip.anchors", std::to_string(cfg.clip.anchors));
  line("clip.p1", std::to_string(cfg.clip.p1));
  line("clip.p2", std::to_string(cfg.clip.p2));
  line("clip.knn", cfg.clip.knn_mode ? "1" : "0");
  line("gamma1", join_i64(cfg.gamma1_widths));
  line("gamma2", join_i64(cfg.gamma2_widths));
  line("gsp.count", std::to_string(cfg.gsp.size()));
  for (size_t i = 0; i < cfg.gsp.size(); ++i) {
    const auto& s = cfg.gsp[i];
    std::string v = std::to_string(s.centroids) + "," + std::to_string(s.k) +
                    "," + g17(s.radius) + "," + std::to_string(s.ratio) + "," +
                    std::to_string(s.kernel) + "," + (s.attention ? "1" : "0");
    for (int64_t w : s.widths) v += "," + std::to_string(w);
    line("gsp." + std::to_string(i), v);
  }
  line("grouping.count", std::to_string(cfg.grouping.branches.size()));
  for (size_t i = 0; i < cfg.grouping.branches.size(); ++i) {
    const auto& b = cfg.grouping.branches[i];
    line("grouping." + std::to_string(i),
         std::to_string(b.r_f) + "," + std::to_string(b.s_f) + "," +
             std::to_string(b.p_f));
  }
  line("grid", g17(cfg.grid.gmin) + "," + g17(cfg.grid.gmax) + "," +
                   std::to_string(cfg.grid.G) + "," + std::to_string(cfg.grid.p));
  line("mixer_stacks", std::to_string(cfg.mixer_stacks));
  line("classifier_hidden", std::to_string(cfg.classifier_hidden));
  return out;
}

ModelConfig config_from_text(const std::string& text) {
  ModelConfig cfg;
  cfg.gsp.clear();
  cfg.grouping.branches.clear();
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string ln = text.substr(pos, eol - pos);
    size_t off = pos;
    pos = eol + 1;
    if (ln.empty()) continue;
    size_t eq = ln.find('=');
    if (eq == std::string::npos)
      throw FormatError("config: line without '=': '" + ln + "'", off);
    std::string key = ln.substr(0, eq);
    std::string val = ln.substr(eq + 1);
    if (key == "format") {
      if (parse_i64(val, off) != 1)
        throw FormatError("config: unsupported format '" + val + "'", off);
    } else if (key == "frames") {
      cfg.frames = parse_i64(val, off);
    } else if (key == "points") {
      cfg.points = parse_i64(val, off);
    } else if (key == "classes") {
      cfg.classes = parse_i64(val, off);
    } else if (key == "arch") {
      cfg.arch = val;
    } else if (key == "clip.d_t") {
      cfg.clip.d_t = parse_i64(val, off);
    } else if (key == "clip.r_t") {
      cfg.clip.r_t = parse_i64(val, off);
    } else if (key == "clip.r_s") {
      cfg.clip.r_s = parse_f64(val, off);
    } else if (key == "clip.k") {
      cfg.clip.K = parse_i64(val, off);
    } else if (key == "clip.anchors") {
      cfg.clip.anchors = parse_i64(val, off);
    } else if (key == "clip.p1") {
      cfg.clip.p1 = parse_i64(val, off);
    } else if (key == "clip.p2") {
      cfg.clip.p2 = parse_i64(val, off);
    } else if (key == "clip.knn") {
      cfg.clip.knn_mode = parse_i64(val, off) != 0;
    } else if (key == "gamma1") {
      cfg.gamma1_widths = parse_i64_list(val, off);
    } else if (key == "gamma2") {
      cfg.gamma2_widths = parse_i64_list(val, off);
    } else if (key == "gsp.count") {
      cfg.gsp.assign(static_cast<size_t>(parse_i64(val, off)),
                     SpatialEncodeLayerSpec{});
    } else if (key.rfind("gsp.", 0) == 0) {
      size_t idx = static_cast<size_t>(parse_i64(key.substr(4), off));
      if (idx >= cfg.gsp.size())
        throw FormatError("config: gsp index " + std::to_string(idx) +
                              " out of range",
                          off);
      auto v = parse_f64_list(val, off);
      if (v.size() < 7)
        throw FormatError("config: gsp layer needs at least 7 fields", off);
      auto& s = cfg.gsp[idx];
      s.centroids = static_cast<int64_t>(v[0]);
      s.k = static_cast<int64_t>(v[1]);
      s.radius = v[2];
      s.ratio = static_cast<int64_t>(v[3]);
      s.kernel = static_cast<int64_t>(v[4]);
      s.attention = v[5] != 0.0;
      s.widths.clear();
      for (size_t j = 6; j < v.size(); ++j)
        s.widths.push_back(static_cast<int64_t>(v[j]));
    } else if (key == "grouping.count") {
      cfg.grouping.branches.assign(static_cast<size_t>(parse_i64(val, off)),
                                   ScaleSpec{});
    } else if (key.rfind("grouping.", 0) == 0) {
      size_t idx = static_cast<size_t>(parse_i64(key.substr(9), off));
      if (idx >= cfg.grouping.branches.size())
        throw FormatError("config: grouping index " + std::to_string(idx) +
                              " out of range",
                          off);
      auto v = parse_i64_list(val, off);
      if (v.size() != 3)
        throw FormatError("config: grouping branch needs 3 fields", off);
      cfg.grouping.branches[idx] = ScaleSpec{v[0], v[1], v[2]};
    } else if (key == "grid") {
      auto v = parse_f64_list(val, off);
      if (v.size() != 4)
        throw FormatError("config: grid needs 4 fields", off);
      cfg.grid = make_uniform_grid(v[0], v[1], static_cast<int>(v[2]),
                                   static_cast<int>(v[3]));
    } else if (key == "mixer_stacks") {
      cfg.mixer_stacks = parse_i64(val, off);
    } else if (key == "classifier_hidden") {
      cfg.classifier_hidden = parse_i64(val, off);
    } else {
      throw FormatError("config: unknown key '" + key + "'", off);
    }
  }
  cfg.check();
  return cfg;
}

uint64_t config_digest(const ModelConfig& cfg) {
  std::string text = config_to_text(cfg);
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- assembly --------------------------------------------------------------

ModelParams make_model(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.check();
  ModelParams p;
  p.cfg = cfg;
  p.gsp = make_gsp(cfg.gsp, 0, rng);
  for (size_t i = 0; i < p.gsp.layers.size(); ++i) {
    std::string base = "gsp.l" + std::to_string(i);
    p.store.add_mlp(base + ".tmlp", p.gsp.layers[i].tmlp);
    if (cfg.gsp[i].attention) {
      const auto& a = p.gsp.layers[i].cbam;
      p.store.add_linear(base + ".att.reduce", a.reduce);
      p.store.add_linear(base + ".att.expand", a.expand);
      p.store.add(base + ".att.conv.w", a.conv_w);
      p.store.add(base + ".att.conv.b", a.conv_b);
    }
  }
  if (cfg.arch == "full") {
    p.rmm = make_rmm(0, cfg.gamma1_widths, cfg.gamma2_widths, rng);
    p.store.add_mlp("rmm.g1", p.rmm.gamma1);
    p.store.add_mlp("rmm.g2", p.rmm.gamma2);
  }
  int64_t w = cfg.embed_width();
  for (int64_t s = 0; s < cfg.mixer_stacks; ++s) {
    MixerParams mp = make_mixer(w, cfg.grouping, cfg.grid, rng);
    std::string base = "mix" + std::to_string(s);
    const KanLayerParams* ls[3] = {&mp.dkan.l1, &mp.dkan.l2, &mp.dkan.l3};
    for (int j = 0; j < 3; ++j) {
      std::string lb = base + ".l" + std::to_string(j + 1);
      p.store.add(lb + ".c", ls[j]->c);
      p.store.add(lb + ".wb", ls[j]->w_b);
      p.store.add(lb + ".ws", ls[j]->w_s);
    }
    w = mixer_out_width(mp, w);
    p.mixers.push_back(std::move(mp));
  }
  p.head_hidden = make_linear(w, cfg.classifier_hidden, rng);
  p.head_out = make_linear(cfg.classifier_hidden, cfg.classes, rng);
  p.store.add_linear("head.hidden", p.head_hidden);
  p.store.add_linear("head.out", p.head_out);
  return p;
}

Tensor embed_dhyperpoints(const PointCloudSequence& seq,
                          const ModelParams& params) {
  if (seq.empty()) throw ContractError("embed_dhyperpoints: empty sequence");
  const ModelConfig& cfg = params.cfg;
  Tensor posture = gsp_forward_seq(seq, params.gsp);
  if (cfg.arch == "gsp_only") return posture;
  Tensor motion = rmm_forward(seq, cfg.clip, params.rmm);
  if (motion.dim(0) != posture.dim(0))
    throw InternalError("embed_dhyperpoints: motion steps " +
                        std::to_string(motion.dim(0)) +
                        " != posture steps " + std::to_string(posture.dim(0)));
  return concat_cols({posture, motion});
}

Tensor model_forward(const PointCloudSequence& seq, const ModelParams& params) {
  const ModelConfig& cfg = params.cfg;
  if (static_cast<int64_t>(seq.size()) != cfg.frames)
    throw ContractError("model_forward: expected " +
                        std::to_string(cfg.frames) + " frames, got " +
                        std::to_string(seq.size()));
  for (size_t i = 0; i < seq.size(); ++i)
    if (seq[i].size() != cfg.points)
      throw ContractError("model_forward: frame " + std::to_string(i) +
                          " has " + std::to_string(seq[i].size()) +
                          " points, expected " + std::to_string(cfg.points));
  Tensor h = embed_dhyperpoints(seq, params);
  for (const auto& m : params.mixers) h = kansmixer_forward(h, m);
  Tensor pooled = reduce_max(h, 0, true);
  Tensor hid = silu(linear(pooled, params.head_hidden));
  return reshape(linear(hid, params.head_out), {cfg.classes});
}

Tensor cross_entropy(const Tensor& logits, int64_t label) {
  if (!logits.defined() || logits.numel() < 2)
    throw ContractError("cross_entropy: need at least two logits");
  int64_t c = logits.numel();
  if (label < 0 || label >= c)
    throw ContractError("cross_entropy: label " + std::to_string(label) +
                        " outside [0, " + std::to_string(c) + ")");
  Tensor l2 = reshape(logits, {1, c});
  Tensor m = reduce_max(l2, 1, true);
  Tensor lse = add(log(reduce_sum(exp(sub(l2, m)), 1, true)), m);
  std::vector<double> oh(static_cast<size_t>(c), 0.0);
  oh[static_cast<size_t>(label)] = 1.0;
  Tensor picked =
      reduce_sum(mul(l2, Tensor::from_data({1, c}, std::move(oh))), 1, true);
  return reshape(sub(lse, picked), {1});
}

int64_t argmax_lowest(const Tensor& logits) {
  const auto& v = logits.data();
  if (v.empty()) throw ContractError("argmax_lowest: empty tensor");
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int64_t>(best);
}

// ---- training and evaluation -----------------------------------------------

namespace {

std::string epoch_filename(int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03lld.khpn",
                static_cast<long long>(epoch));
  return buf;
}

void check_labels(const Dataset& data, int64_t classes, const char* who) {
  for (size_t i = 0; i < data.size(); ++i)
    if (data[i].label < 0 || data[i].label >= classes)
      throw ContractError(std::string(who) + ": sample " + std::to_string(i) +
                          " has label " + std::to_string(data[i].label) +
                          ", expected [0, " + std::to_string(classes) + ")");
}

}  // namespace

TrainResult train_model(ModelParams& params, const Dataset& train,
                        const Dataset& eval, const TrainConfig& tcfg) {
  if (train.empty()) throw ContractError("train_model: empty training set");
  if (tcfg.epochs < 1)
    throw ContractError("train_model: epochs must be >= 1, got " +
                        std::to_string(tcfg.epochs));
  if (tcfg.batch_size < 1)
    throw ContractError("train_model: batch_size must be >= 1, got " +
                        std::to_string(tcfg.batch_size));
  if (tcfg.optimizer != "sgd")
    throw ContractError("train_model: unknown optimizer '" + tcfg.optimizer +
                        "'");
  check_labels(train, params.cfg.classes, "train_model");
  if (!eval.empty()) check_labels(eval, params.cfg.classes, "train_model");

  if (!tcfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(tcfg.checkpoint_dir);
    std::ofstream cf(tcfg.checkpoint_dir + "/config.txt",
                     std::ios::binary | std::ios::trunc);
    if (!cf)
      throw Error("train_model: cannot write config to " +
                  tcfg.checkpoint_dir);
    cf << config_to_text(params.cfg);
  }

  std::map<std::string, std::vector<double>> velocity;
  for (const auto& [name, t] : params.store.params)
    velocity[name].assign(t.data().size(), 0.0);

  std::mt19937_64 shuffle_rng(tcfg.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult res;
  for (int64_t e = 0; e < tcfg.epochs; ++e) {
    double lr = tcfg.cosine
                    ? tcfg.lr * 0.5 *
                          (1.0 + std::cos(std::numbers::pi *
                                          static_cast<double>(e) /
                                          static_cast<double>(tcfg.epochs)))
                    : tcfg.lr;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int64_t correct = 0;
    bool nonfinite = false;
    for (size_t b0 = 0; b0 < order.size() && !nonfinite;
         b0 += static_cast<size_t>(tcfg.batch_size)) {
      size_t b1 = std::min(b0 + static_cast<size_t>(tcfg.batch_size),
                           order.size());
      double inv = 1.0 / static_cast<double>(b1 - b0);
      params.store.zero_grads();
      for (size_t j = b0; j < b1; ++j) {
        const LabeledSample& s = train[order[j]];
        Tensor logits = model_forward(s.seq, params);
        Tensor ce = cross_entropy(logits, s.label);
        double item = ce.item();
        if (!std::isfinite(item)) {
          nonfinite = true;
          break;
        }
        if (argmax_lowest(logits) == s.label) ++correct;
        loss_sum += item;
        backward(mul_scalar(ce, inv));
      }
      if (nonfinite) break;
      for (auto& [name, t] : params.store.params) {
        auto& v = velocity[name];
        const auto& g = t.grad();
        auto& x = t.mutable_data();
        for (size_t i = 0; i < v.size(); ++i) {
          v[i] = tcfg.momentum * v[i] + g[i];
          x[i] -= lr * v[i];
        }
      }
    }
    if (nonfinite) {
      res.aborted = true;
      break;
    }
    double n = static_cast<double>(train.size());
    res.metrics.push_back(
        {e + 1, "train", loss_sum / n, static_cast<double>(correct) / n});
    if (!eval.empty()) {
      EvalResult er = evaluate_model(eval, params);
      res.metrics.push_back({e + 1, "test", er.loss, er.accuracy});
    }
    if (!tcfg.checkpoint_dir.empty())
      save_checkpoint(tcfg.checkpoint_dir + "/" + epoch_filename(e + 1),
                      params);
    res.epochs_run = e + 1;
  }
  return res;
}

EvalResult evaluate_model(const Dataset& data, const ModelParams& params) {
  if (data.empty()) throw ContractError("evaluate_model: empty dataset");
  int64_t c = params.cfg.classes;
  check_labels(data, c, "evaluate_model");
  EvalResult res;
  res.confusion.assign(static_cast<size_t>(c * c), 0);
  NoGradGuard guard;
  int64_t correct = 0;
  for (const auto& s : data) {
    Tensor logits = model_forward(s.seq, params);
    res.loss += cross_entropy(logits, s.label).item();
    int64_t pred = argmax_lowest(logits);
    ++res.confusion[static_cast<size_t>(s.label * c + pred)];
    if (pred == s.label) ++correct;
  }
  double n = static_cast<double>(data.size());
  res.loss /= n;
  res.accuracy = static_cast<double>(correct) / n;
  return res;
}

std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::string out = "epoch,split,loss,accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%.17g\n",
                  static_cast<long long>(r.epoch), r.split.c_str(), r.loss,
                  r.accuracy);
    out += buf;
  }
  return out;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > buf.size())
      throw FormatError(std::string("checkpoint truncated reading ") + what,
                        pos);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::string out;
  out += "KHPN";
  put_u32(out, 1);
  put_u64(out, config_digest(params.cfg));
  put_u32(out, static_cast<uint32_t>(params.store.params.size()));
  for (const auto& [name, t] : params.store.params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      put_u64(out, static_cast<uint64_t>(t.dim(i)));
    for (double v : t.data()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw Error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, ModelParams& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();
  ByteReader r{buf};
  std::string magic = r.bytes(4, "magic");
  if (magic != "KHPN") throw FormatError("bad checkpoint magic", 0);
  uint32_t version = r.u32("version");
  if (version != 1)
    throw FormatError("unsupported checkpoint version " +
                          std::to_string(version),
                      4);
  uint64_t digest = r.u64("config digest");
  uint64_t want = config_digest(params.cfg);
  if (digest != want)
    throw ContractError("load_checkpoint: checkpoint digest " + hex64(digest) +
                        " does not match model config digest " + hex64(want));
  uint32_t count = r.u32("tensor count");
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    size_t name_off = r.pos;
    uint32_t nl = r.u32("name length");
    std::string name = r.bytes(nl, "name");
    if (!seen.insert(name).second)
      throw FormatError("duplicate parameter '" + name + "'", name_off);
    auto it = params.store.params.find(name);
    if (it == params.store.params.end())
      throw ContractError("load_checkpoint: unknown parameter '" + name + "'");
    uint32_t rank = r.u32("rank");
    Shape shp(rank);
    for (uint32_t j = 0; j < rank; ++j)
      shp[j] = static_cast<int64_t>(r.u64("dim"));
    Tensor& t = it->second;
    if (shp != t.shape())
      throw ShapeError("load_checkpoint: parameter '" + name + "' has shape " +
                       shape_str(shp) + ", model expects " +
                       shape_str(t.shape()));
    for (auto& v : t.mutable_data()) v = r.f64("values");
  }
  if (seen.size() != params.store.params.size())
    for (const auto& [name, t] : params.store.params)
      if (!seen.count(name))
        throw ContractError("load_checkpoint: checkpoint is missing parameter '" +
                            name + "'");
  if (r.pos != buf.size())
    throw FormatError("trailing bytes after checkpoint payload", r.pos);
}

}  // namespace khpn
