#include "khpn/dataio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "khpn/errors.hpp"

namespace khpn {
namespace {

namespace fs = std::filesystem;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  size_t remaining() const { return buf.size() - pos; }
  void need(size_t n, const char* what) {
    if (remaining() < n)
      throw FormatError(std::string("truncated reading ") + what, pos);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v = static_cast<uint16_t>(
          v | static_cast<uint16_t>(static_cast<unsigned char>(buf[pos + i]))
                  << (8 * i));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  int32_t i32(const char* what) { return static_cast<int32_t>(u32(what)); }
  float f32(const char* what) {
    return std::bit_cast<float>(u32(what));
  }
};

float checked_f32(double v) {
  float f = static_cast<float>(v);
  if (!std::isfinite(f))
    throw ContractError("value " + std::to_string(v) +
                        " is not representable as a finite 32-bit float");
  return f;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return std::move(os).str();
}

// --- synthetic motion benchmark -------------------------------------------

std::array<double, 3> random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    std::array<double, 3> v{g(rng), g(rng), g(rng)};
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

struct Rot {
  double m[9];
  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2],
            m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
            m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
  }
};

Rot axis_angle(const std::array<double, 3>& a, double angle) {
  double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{t * a[0] * a[0] + c, t * a[0] * a[1] - s * a[2],
           t * a[0] * a[2] + s * a[1], t * a[0] * a[1] + s * a[2],
           t * a[1] * a[1] + c, t * a[1] * a[2] - s * a[0],
           t * a[0] * a[2] - s * a[1], t * a[1] * a[2] + s * a[0],
           t * a[2] * a[2] + c}};
}

// Template coordinates live on a 2^-10 grid and drift steps on a 2^-12 grid:
// sums p + t*v then stay exact in both 64- and 32-bit floats, which is what
// makes the noise-free translate class a bitwise shift of frame 0.
double quant_coord(double v) { return std::nearbyint(v * 1024.0) / 1024.0; }
double quant_step(double v) { return std::nearbyint(v * 4096.0) / 4096.0; }

PointCloudSequence make_sample(const SynthSpec& spec, int64_t cls,
                               std::mt19937_64& rng) {
  const int64_t n = spec.points, t_total = spec.frames;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double two_pi = 2.0 * std::acos(-1.0);

  // Randomized rigid template: a few gaussian blobs inside the unit ball.
  int64_t blobs = std::min<int64_t>(3 + static_cast<int64_t>(rng() % 3), n);
  std::vector<std::array<double, 3>> centers(static_cast<size_t>(blobs));
  for (auto& c : centers) {
    auto dir = random_unit(rng);
    double r = 0.55 * std::cbrt(u01(rng));
    c = {dir[0] * r, dir[1] * r, dir[2] * r};
  }
  double blob_sigma = 0.10 + 0.10 * u01(rng);
  std::vector<std::array<double, 3>> tmpl(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const auto& c = centers[static_cast<size_t>(i % blobs)];
    std::array<double, 3> p{c[0] + blob_sigma * gauss(rng),
                            c[1] + blob_sigma * gauss(rng),
                            c[2] + blob_sigma * gauss(rng)};
    double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (r > 0.85)
      for (double& d : p) d *= 0.85 / r;
    for (double& d : p) d = quant_coord(d);
    tmpl[static_cast<size_t>(i)] = p;
  }

  // Common drift, shared by every class.
  auto drift_dir = random_unit(rng);
  double drift_total = 0.15 + 0.15 * u01(rng);
  double step = drift_total / static_cast<double>(std::max<int64_t>(t_total - 1, 1));
  std::array<double, 3> v{quant_step(drift_dir[0] * step),
                          quant_step(drift_dir[1] * step),
                          quant_step(drift_dir[2] * step)};

  // Every class carries the same motion components with identically
  // distributed amplitudes — breathing, an anisotropic stretch, a two-half
  // swing and an orientation jiggle — so the multiset of per-frame shapes is
  // class-independent. Class identity is carried by temporal structure only:
  // the stretch runs fast for scale-oscillate, the swing runs fast for
  // two-part-swing, rotate adds a monotone sweep, translate nothing. The
  // slow copies are decoys; they (and breathing/jiggle) switch off in the
  // exact noise-free mode, where class components alone remain.
  bool decoys = spec.noise_sigma > 0.0;
  auto slow = [&] { return 1.0 + 2.0 * u01(rng); };
  auto fast = [&] { return 4.5 + 2.0 * u01(rng); };
  double breath_amp = 0.05 + 0.07 * u01(rng);
  double breath_freq = slow(), breath_phase = two_pi * u01(rng);
  auto jig_axis = random_unit(rng);
  double jig_amp = 0.06 + 0.10 * u01(rng);
  double jig_freq = slow(), jig_phase = two_pi * u01(rng);

  auto rot_axis = random_unit(rng);
  double rot_total = (0.25 + 0.25 * u01(rng)) * (rng() % 2 ? 1.0 : -1.0);
  if (cls != 1) rot_total = 0.0;

  auto stretch_axis = random_unit(rng);
  double stretch_amp = 0.06 + 0.08 * u01(rng);
  double stretch_freq = cls == 2 ? fast() : slow();
  double stretch_phase = two_pi * u01(rng);
  bool stretch_on = cls == 2 || decoys;

  auto split_normal = random_unit(rng);
  auto swing_axis = random_unit(rng);
  double swing_amp = 0.10 + 0.12 * u01(rng);
  double swing_freq = cls == 3 ? fast() : slow();
  double swing_phase = two_pi * u01(rng);
  bool swing_on = cls == 3 || decoys;

  std::vector<bool> first_half(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const auto& p = tmpl[static_cast<size_t>(i)];
    first_half[static_cast<size_t>(i)] =
        p[0] * split_normal[0] + p[1] * split_normal[1] +
            p[2] * split_normal[2] >=
        0.0;
  }

  if (cls < 0 || cls > 3) throw InternalError("unknown synth class id");

  PointCloudSequence seq(static_cast<size_t>(t_total));
  for (int64_t t = 0; t < t_total; ++t) {
    double tau = t_total > 1
                     ? static_cast<double>(t) / static_cast<double>(t_total - 1)
                     : 0.0;
    Rot rot = axis_angle(rot_axis, rot_total * tau);
    double s = 1.0 + stretch_amp *
                         std::sin(two_pi * stretch_freq * tau + stretch_phase);
    double s_perp = 1.0 / std::sqrt(s);
    double swing = swing_amp * std::sin(two_pi * swing_freq * tau + swing_phase);
    Rot swing_pos = axis_angle(swing_axis, swing);
    Rot swing_neg = axis_angle(swing_axis, -swing);
    double breath =
        1.0 + breath_amp * std::sin(two_pi * breath_freq * tau + breath_phase);
    Rot jig = axis_angle(
        jig_axis, jig_amp * std::sin(two_pi * jig_freq * tau + jig_phase));

    PointCloudFrame& fr = seq[static_cast<size_t>(t)];
    fr.coords.resize(static_cast<size_t>(3 * n));
    for (int64_t i = 0; i < n; ++i) {
      std::array<double, 3> q = tmpl[static_cast<size_t>(i)];
      if (stretch_on) {
        double par = q[0] * stretch_axis[0] + q[1] * stretch_axis[1] +
                     q[2] * stretch_axis[2];
        for (int d = 0; d < 3; ++d)
          q[d] = s_perp * q[d] + (s - s_perp) * par * stretch_axis[d];
      }
      if (swing_on)
        q = (first_half[static_cast<size_t>(i)] ? swing_pos : swing_neg)
                .apply(q);
      if (cls == 1) q = rot.apply(q);
      if (decoys) {
        for (double& d : q) d *= breath;
        q = jig.apply(q);
      }
      for (int d = 0; d < 3; ++d) {
        double c = q[d] + static_cast<double>(t) * v[d];
        if (spec.noise_sigma > 0.0) c += spec.noise_sigma * gauss(rng);
        fr.coords[static_cast<size_t>(3 * i + d)] = c;
      }
    }
  }
  return seq;
}

const std::vector<std::string>& known_classes() {
  static const std::vector<std::string> names{
      "translate", "rotate", "scale-oscillate", "two-part-swing"};
  return names;
}

}  // namespace

// --- sequence container -----------------------------------------------------

void save_sequence(const std::string& path, const PointCloudSequence& seq,
                   int64_t label) {
  if (seq.empty()) throw ContractError("cannot save an empty sequence");
  if (label < std::numeric_limits<int32_t>::min() ||
      label > std::numeric_limits<int32_t>::max())
    throw ContractError("label " + std::to_string(label) +
                        " does not fit the 32-bit label field");
  int64_t width = seq.front().feature_width;
  int64_t max_n = 0;
  for (const auto& f : seq) {
    f.validate();
    if (f.feature_width != width)
      throw ContractError("frames disagree on feature width (" +
                          std::to_string(width) + " vs " +
                          std::to_string(f.feature_width) + ")");
    max_n = std::max(max_n, f.size());
  }

  std::string buf;
  buf += "PCSQ";
  put_u16(buf, 1);
  put_u32(buf, static_cast<uint32_t>(seq.size()));
  put_u32(buf, static_cast<uint32_t>(max_n));
  put_u32(buf, static_cast<uint32_t>(width));
  put_u32(buf, static_cast<uint32_t>(static_cast<int32_t>(label)));
  for (const auto& f : seq) {
    put_u32(buf, static_cast<uint32_t>(f.size()));
    for (int64_t i = 0; i < f.size(); ++i) {
      for (int d = 0; d < 3; ++d)
        put_f32(buf, checked_f32(f.coords[static_cast<size_t>(3 * i + d)]));
      for (int64_t c = 0; c < width; ++c) {
        double fv = f.features[static_cast<size_t>(i * width + c)];
        if (!std::isfinite(fv))
          throw ContractError("non-finite feature value");
        put_f32(buf, checked_f32(fv));
      }
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("write failed for " + path);
}

LabeledSample load_sequence(const std::string& path) {
  std::string buf = read_file(path);
  ByteReader r{buf};

  r.need(4, "magic");
  if (buf.compare(0, 4, "PCSQ") != 0) throw FormatError("bad magic", 0);
  r.pos = 4;
  uint16_t version = r.u16("version");
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version), 4);
  size_t frames_off = r.pos;
  uint32_t frames = r.u32("frame count");
  if (frames == 0) throw FormatError("zero frames", frames_off);
  size_t maxn_off = r.pos;
  uint32_t max_n = r.u32("max point count");
  if (max_n == 0) throw FormatError("zero max point count", maxn_off);
  uint32_t width = r.u32("feature width");
  int32_t label = r.i32("label");

  LabeledSample out;
  out.label = label;
  out.seq.resize(frames);
  for (uint32_t f = 0; f < frames; ++f) {
    size_t count_off = r.pos;
    uint32_t count = r.u32("point count");
    if (count == 0) throw FormatError("empty frame", count_off);
    if (count > max_n)
      throw FormatError("frame point count " + std::to_string(count) +
                            " exceeds header maximum " + std::to_string(max_n),
                        count_off);
    size_t values = static_cast<size_t>(count) * (3 + width);
    if (r.remaining() < 4 * values)
      throw FormatError("truncated frame payload", r.pos);
    PointCloudFrame& fr = out.seq[f];
    fr.feature_width = width;
    fr.coords.resize(3 * static_cast<size_t>(count));
    fr.features.resize(static_cast<size_t>(count) * width);
    for (uint32_t i = 0; i < count; ++i) {
      for (int d = 0; d < 3; ++d) {
        size_t off = r.pos;
        double v = r.f32("coordinate");
        if (!std::isfinite(v)) throw FormatError("non-finite coordinate", off);
        fr.coords[3 * static_cast<size_t>(i) + static_cast<size_t>(d)] = v;
      }
      for (uint32_t c = 0; c < width; ++c) {
        size_t off = r.pos;
        double v = r.f32("feature");
        if (!std::isfinite(v)) throw FormatError("non-finite feature", off);
        fr.features[static_cast<size_t>(i) * width + c] = v;
      }
    }
  }
  if (r.pos != buf.size()) throw FormatError("trailing bytes", r.pos);
  return out;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < ds.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu.pcsq", i);
    save_sequence((fs::path(dir) / name).string(), ds[i].seq, ds[i].label);
  }
}

Dataset load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error("no such dataset directory: " + dir);
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pcsq")
      paths.push_back(e.path());
  if (paths.empty()) throw Error("no .pcsq files under " + dir);
  std::sort(paths.begin(), paths.end());
  Dataset out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_sequence(p.string()));
  return out;
}

PointCloudSequence load_xyz_frames(const std::string& path) {
  std::string text = read_file(path);
  PointCloudSequence seq;
  PointCloudFrame cur;
  size_t line_start = 0;
  auto close_frame = [&] {
    if (!cur.coords.empty()) {
      seq.push_back(std::move(cur));
      cur = PointCloudFrame{};
    }
  };
  while (line_start <= text.size()) {
    size_t nl = text.find('\n', line_start);
    size_t line_end = nl == std::string::npos ? text.size() : nl;
    std::string line = text.substr(line_start, line_end - line_start);
    bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
    if (blank) {
      close_frame();
    } else {
      std::istringstream is(line);
      double x, y, z;
      std::string extra;
      if (!(is >> x >> y >> z) || (is >> extra))
        throw FormatError("malformed point line", line_start);
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
        throw FormatError("non-finite coordinate", line_start);
      cur.coords.insert(cur.coords.end(), {x, y, z});
    }
    if (nl == std::string::npos) break;
    line_start = nl + 1;
  }
  close_frame();
  if (seq.empty()) throw FormatError("no frames", text.size());
  return seq;
}

// --- synthetic benchmark -----------------------------------------------------

void SynthSpec::check() const {
  if (classes.size() < 2) throw ContractError("need at least two classes");
  for (const auto& c : classes) {
    const auto& known = known_classes();
    if (std::find(known.begin(), known.end(), c) == known.end())
      throw ContractError("unknown class \"" + c + "\"");
    if (std::count(classes.begin(), classes.end(), c) != 1)
      throw ContractError("duplicate class \"" + c + "\"");
  }
  if (points < 1) throw ContractError("points must be >= 1");
  if (frames < 1) throw ContractError("frames must be >= 1");
  if (!(noise_sigma >= 0.0))
    throw ContractError("noise sigma must be >= 0");
}

Dataset synth_dataset(const SynthSpec& spec, int64_t per_class) {
  spec.check();
  if (per_class < 1) throw ContractError("per_class must be >= 1");
  std::mt19937_64 master(spec.seed);
  const auto& known = known_classes();
  int64_t c_count = static_cast<int64_t>(spec.classes.size());
  Dataset out;
  out.reserve(static_cast<size_t>(per_class * c_count));
  for (int64_t s = 0; s < per_class * c_count; ++s) {
    int64_t label = s % c_count;
    int64_t cls = std::find(known.begin(), known.end(),
                            spec.classes[static_cast<size_t>(label)]) -
                  known.begin();
    std::mt19937_64 rng(master());
    out.push_back({make_sample(spec, cls, rng), label});
  }
  return out;
}

PointCloudSequence subsample_sequence(const PointCloudSequence& seq,
                                      int64_t t_out, int64_t n_out,
                                      uint64_t seed) {
  int64_t t_in = static_cast<int64_t>(seq.size());
  if (t_out < 1 || t_out > t_in)
    throw ContractError("cannot select " + std::to_string(t_out) +
                        " frames from " + std::to_string(t_in));
  if (n_out < 1) throw ContractError("n_out must be >= 1");
  for (const auto& f : seq) f.validate();

  PointCloudSequence out(static_cast<size_t>(t_out));
  for (int64_t i = 0; i < t_out; ++i) {
    const PointCloudFrame& src = seq[static_cast<size_t>(i * t_in / t_out)];
    int64_t n = src.size();
    int64_t k = std::min(n_out, n);
    int64_t start = static_cast<int64_t>(seed % static_cast<uint64_t>(n));
    std::vector<int64_t> idx = farthest_point_sample(src, k, start);
    PointCloudFrame& dst = out[static_cast<size_t>(i)];
    dst.feature_width = src.feature_width;
    dst.coords.resize(static_cast<size_t>(3 * n_out));
    dst.features.resize(static_cast<size_t>(n_out * src.feature_width));
    for (int64_t j = 0; j < n_out; ++j) {
      int64_t p = idx[static_cast<size_t>(j % k)];
      for (int d = 0; d < 3; ++d)
        dst.coords[static_cast<size_t>(3 * j + d)] =
            src.coords[static_cast<size_t>(3 * p + d)];
      for (int64_t c = 0; c < src.feature_width; ++c)
        dst.features[static_cast<size_t>(j * src.feature_width + c)] =
            src.features[static_cast<size_t>(p * src.feature_width + c)];
    }
  }

  double centroid[3] = {0.0, 0.0, 0.0};
  for (const auto& f : out)
    for (int64_t i = 0; i < f.size(); ++i)
      for (int d = 0; d < 3; ++d)
        centroid[d] += f.coords[static_cast<size_t>(3 * i + d)];
  double total = static_cast<double>(t_out * n_out);
  for (double& c : centroid) c /= total;
  double max_r2 = 0.0;
  for (auto& f : out)
    for (int64_t i = 0; i < f.size(); ++i) {
      double r2 = 0.0;
      for (int d = 0; d < 3; ++d) {
        double& c = f.coords[static_cast<size_t>(3 * i + d)];
        c -= centroid[d];
        r2 += c * c;
      }
      max_r2 = std::max(max_r2, r2);
    }
  if (max_r2 > 0.0) {
    double inv = 1.0 / std::sqrt(max_r2);
    for (auto& f : out)
      for (double& c : f.coords) c *= inv;
  }
  return out;
}

}  // namespace khpn
