#include "firenet/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/textconfig.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

constexpr std::size_t kMaxHeader = 1 << 24;

void append_f32(std::string& out, std::span<const float> v) {
  const std::size_t at = out.size();
  out.resize(at + v.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + at, v.data(), v.size() * 4);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto u = std::bit_cast<uint32_t>(v[i]);
      for (int b = 0; b < 4; ++b) out[at + 4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
  }
}

std::vector<float> read_f32(const std::string& bytes, std::size_t at, std::size_t count) {
  std::vector<float> v(count);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(v.data(), bytes.data() + at, count * 4);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[at + 4 * i + b])) << (8 * b);
      v[i] = std::bit_cast<float>(u);
    }
  }
  return v;
}

// Splits `bytes` at the first line equal to "end"; returns the header lines
// and the payload offset.
std::pair<std::vector<std::string>, std::size_t> split_header(const std::string& bytes, const std::string& what) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < bytes.size() && pos < kMaxHeader) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) break;
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    if (line == "end") return {lines, pos};
    lines.push_back(std::move(line));
  }
  throw IoError(what + ": header has no terminating 'end' line");
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::vector<std::string> split_names(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::string join_names(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) s += (i ? ", " : "") + names[i];
  return s;
}

std::string exact(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double parse_exact(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw IoError("checkpoint: bad number for " + key + ": '" + v + "'");
  return d;
}

std::vector<float> to_f32(std::span<const real> v) { return {v.begin(), v.end()}; }

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- volumes --------------------------------------------------------------

const char* dtype_name(DType t) { return t == DType::F32 ? "f32" : "u8"; }

void Volume::validate() const {
  for (int64_t d : dims) {
    if (d < 1) throw ShapeError("volume: every dimension must be >= 1");
  }
  if (channels < 1) throw ShapeError("volume: channels must be >= 1");
  const auto n = static_cast<std::size_t>(value_count());
  const std::size_t have = dtype == DType::F32 ? f32.size() : u8.size();
  if (have != n) {
    throw ShapeError("volume: " + std::to_string(have) + " values for " + std::to_string(n) + " voxels");
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("volume: spacing must be positive");
  }
}

Volume image_volume(const Tensor5& image, const Spacing& spacing) {
  const auto& s = image.shape();
  if (s.batch() != 1) throw ShapeError("volume: image batch must be 1");
  Volume v;
  v.dims = s.spatial();
  v.channels = s.channels();
  v.spacing = spacing;
  v.f32 = to_f32(image.data());
  return v;
}

Volume label_volume(const std::vector<int>& labels, const Extent3& extent, const Spacing& spacing,
                    const std::vector<std::string>& class_names) {
  Volume v;
  v.dims = extent;
  v.dtype = DType::U8;
  v.spacing = spacing;
  v.class_names = class_names;
  v.u8.reserve(labels.size());
  for (int l : labels) {
    if (l < 0 || l > 255) throw ConfigError("volume: label " + std::to_string(l) + " does not fit u8");
    v.u8.push_back(static_cast<uint8_t>(l));
  }
  v.validate();
  return v;
}

Tensor5 volume_tensor(const Volume& v) {
  if (v.dtype != DType::F32) throw ConfigError("volume: expected an f32 image volume");
  return Tensor5(Shape(1, v.channels, v.dims[0], v.dims[1], v.dims[2]),
                 std::vector<real>(v.f32.begin(), v.f32.end()));
}

std::vector<int> volume_labels(const Volume& v) {
  if (v.dtype != DType::U8 || v.channels != 1) throw ConfigError("volume: expected a single-channel u8 label volume");
  return {v.u8.begin(), v.u8.end()};
}

std::string encode_volume(const Volume& v) {
  v.validate();
  std::ostringstream os;
  os << std::setprecision(17) << "firenet-volume 1\n"
     << "dims = " << v.dims[0] << " " << v.dims[1] << " " << v.dims[2] << "\n"
     << "channels = " << v.channels << "\n"
     << "dtype = " << dtype_name(v.dtype) << "\n"
     << "spacing_mm = " << v.spacing[0] << " " << v.spacing[1] << " " << v.spacing[2] << "\n";
  if (!v.class_names.empty()) os << "class_names = " << join_names(v.class_names) << "\n";
  os << "end\n";
  std::string out = os.str();
  if (v.dtype == DType::F32) {
    append_f32(out, v.f32);
  } else {
    out.append(reinterpret_cast<const char*>(v.u8.data()), v.u8.size());
  }
  return out;
}

Volume decode_volume(const std::string& bytes, const std::string& what) {
  const auto [lines, at] = split_header(bytes, what);
  if (lines.empty() || lines[0] != "firenet-volume 1") throw IoError(what + ": not a firenet volume (bad magic line)");
  std::string body;
  for (std::size_t i = 1; i < lines.size(); ++i) body += lines[i] + "\n";
  Volume v;
  bool have_dims = false, have_dtype = false;
  try {
    for (const auto& [key, val] : parse_key_values(body)) {
      if (key == "dims") {
        const auto w = words(val);
        if (w.size() != 3) throw IoError(what + ": dims needs three integers");
        for (int a = 0; a < 3; ++a) v.dims[a] = parse_int(key, w[a]);
        have_dims = true;
      } else if (key == "channels") {
        v.channels = parse_int(key, val);
      } else if (key == "dtype") {
        if (val == "f32") v.dtype = DType::F32;
        else if (val == "u8") v.dtype = DType::U8;
        else throw IoError(what + ": unknown dtype '" + val + "' (expected f32 or u8)");
        have_dtype = true;
      } else if (key == "spacing_mm") {
        const auto w = words(val);
        if (w.size() != 3) throw IoError(what + ": spacing_mm needs three numbers");
        for (int a = 0; a < 3; ++a) v.spacing[a] = parse_double(key, w[a]);
      } else if (key == "class_names") {
        v.class_names = split_names(val);
      } else {
        throw IoError(what + ": unknown header key '" + key + "'");
      }
    }
  } catch (const ConfigError& e) {
    throw IoError(what + ": " + e.what());
  }
  if (!have_dims || !have_dtype) throw IoError(what + ": header needs dims and dtype");
  for (int64_t d : v.dims) {
    if (d < 1) throw IoError(what + ": dims must be >= 1");
  }
  if (v.channels < 1) throw IoError(what + ": channels must be >= 1");
  const auto n = static_cast<std::size_t>(v.value_count());
  const std::size_t want = n * (v.dtype == DType::F32 ? 4 : 1);
  const std::size_t have = bytes.size() - at;
  if (have < want) {
    throw IoError(what + ": truncated payload, " + std::to_string(have) + " of " + std::to_string(want) + " bytes");
  }
  if (have > want) {
    throw IoError(what + ": payload of " + std::to_string(have) + " bytes does not match dims (" +
                  std::to_string(want) + " bytes)");
  }
  if (v.dtype == DType::F32) {
    v.f32 = read_f32(bytes, at, n);
  } else {
    v.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at), bytes.end());
  }
  v.validate();
  return v;
}

void save_volume(const fs::path& path, const Volume& v) { write_file_atomic(path, encode_volume(v)); }

Volume load_volume(const fs::path& path) { return decode_volume(read_file(path), path.string()); }

// ---- checkpoints ----------------------------------------------------------

const std::string* Checkpoint::training_value(const std::string& key) const {
  for (const auto& [k, v] : training) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& c) {
  std::ostringstream os;
  os << "firenet-checkpoint\nformat_version = " << kCheckpointVersion << "\n[config]\n" << c.config.to_text();
  os << "[training]\n";
  for (const auto& [k, v] : c.training) os << k << " = " << v << "\n";
  os << "[tensors]\n";
  std::string payload;
  for (const auto& e : c.params) {
    if (static_cast<int64_t>(e.values.size()) != e.shape.numel()) {
      throw ShapeError("checkpoint: " + e.name + " has a value count that disagrees with its shape");
    }
    os << "param " << e.name << " " << group_name(e.group) << " ";
    for (int64_t d : e.shape.dims) os << d << " ";
    os << payload.size() / 4 << "\n";
    append_f32(payload, e.values);
  }
  for (const auto& [name, m] : c.moments) {
    if (m.m.size() != m.v.size()) throw ShapeError("checkpoint: moment sizes differ for " + name);
    os << "moment " << name << " " << m.t << " " << m.m.size() << " " << payload.size() / 4 << "\n";
    append_f32(payload, to_f32(m.m));
    append_f32(payload, to_f32(m.v));
  }
  os << "end\n";
  return os.str() + payload;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what) {
  const auto [lines, at] = split_header(bytes, what);
  if (lines.size() < 2 || lines[0] != "firenet-checkpoint") throw IoError(what + ": not a firenet checkpoint");
  {
    const auto kv = parse_key_values(lines[1]);
    if (kv.size() != 1 || kv[0].first != "format_version") throw IoError(what + ": missing format_version");
    const auto ver = parse_int("format_version", kv[0].second);
    if (ver != kCheckpointVersion) {
      throw IoError(what + ": format version " + std::to_string(ver) + " is not supported (this build reads " +
                    std::to_string(kCheckpointVersion) + ")");
    }
  }
  Checkpoint c;
  std::string section, config_text;
  const std::size_t payload_floats = (bytes.size() - at) / 4;
  if ((bytes.size() - at) % 4 != 0) throw IoError(what + ": payload is not a whole number of f32 values");
  std::size_t expected_offset = 0;
  auto take = [&](std::size_t offset, std::size_t count, const std::string& name) {
    if (offset != expected_offset || offset + count > payload_floats) {
      throw IoError(what + ": truncated or inconsistent payload at " + name);
    }
    expected_offset += count;
    return read_f32(bytes, at + offset * 4, count);
  };
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    if (section == "config") {
      config_text += line + "\n";
    } else if (section == "training") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError(what + ": bad training line '" + line + "'");
      c.training.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } else if (section == "tensors") {
      const auto w = words(line);
      try {
        if (w.size() == 9 && w[0] == "param") {
          Checkpoint::Entry e;
          e.name = w[1];
          e.group = parse_group(w[2]);
          e.shape = Shape(parse_int("n", w[3]), parse_int("c", w[4]), parse_int("d", w[5]), parse_int("h", w[6]),
                          parse_int("w", w[7]));
          e.values = take(static_cast<std::size_t>(parse_int("offset", w[8])),
                          static_cast<std::size_t>(e.shape.numel()), e.name);
          c.params.push_back(std::move(e));
        } else if (w.size() == 5 && w[0] == "moment") {
          AdamMoments m;
          m.t = parse_int("t", w[2]);
          const auto n = static_cast<std::size_t>(parse_int("count", w[3]));
          const auto off = static_cast<std::size_t>(parse_int("offset", w[4]));
          const auto mv = take(off, n, w[1]);
          const auto vv = take(off + n, n, w[1]);
          m.m.assign(mv.begin(), mv.end());
          m.v.assign(vv.begin(), vv.end());
          c.moments.emplace(w[1], std::move(m));
        } else {
          throw IoError(what + ": bad tensor line '" + line + "'");
        }
      } catch (const ConfigError& e) {
        throw IoError(what + ": " + e.what());
      }
    } else {
      throw IoError(what + ": unexpected header line '" + line + "'");
    }
  }
  if (expected_offset != payload_floats) {
    throw IoError(what + ": payload holds " + std::to_string(payload_floats) + " values, manifest lists " +
                  std::to_string(expected_offset));
  }
  try {
    c.config = NetworkConfig::from_text(config_text);
  } catch (const ConfigError& e) {
    throw IoError(what + ": bad network config: " + e.what());
  }
  return c;
}

Checkpoint capture(const Network& net) {
  Checkpoint c;
  c.config = net.config();
  for (const auto& p : net.parameters().all()) {
    c.params.push_back({p->name, p->group, p->value.shape(), to_f32(p->value.data())});
  }
  return c;
}

namespace {

void fill_parameters(const Checkpoint& c, Network& net) {
  auto& store = net.parameters();
  if (store.size() != c.params.size()) {
    throw IoError("checkpoint lists " + std::to_string(c.params.size()) + " parameters, the network has " +
                  std::to_string(store.size()));
  }
  for (const auto& e : c.params) {
    Parameter* p = store.find(e.name);
    if (!p) throw IoError("checkpoint parameter " + e.name + " does not exist in the network");
    if (!(p->value.shape() == e.shape)) {
      throw IoError("checkpoint parameter " + e.name + " has shape " + e.shape.str() + ", network expects " +
                    p->value.shape().str());
    }
    if (p->group != e.group) throw IoError("checkpoint parameter " + e.name + " is in the wrong group");
    std::copy(e.values.begin(), e.values.end(), p->value.mutable_data().begin());
  }
}

}  // namespace

Network restore(const Checkpoint& c) {
  Network net(c.config, 0);
  fill_parameters(c, net);
  return net;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) { write_file_atomic(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint_file(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

Network load_network(const fs::path& path) { return restore(load_checkpoint_file(path)); }

Network load_for_transfer(const Checkpoint& c, const NetworkConfig& expected, int replace_head, uint64_t seed) {
  auto diff = c.config.differences(expected);
  if (replace_head > 0) std::erase(diff, std::string("num_classes"));
  if (!diff.empty()) {
    std::string list;
    for (const auto& d : diff) list += (list.empty() ? "" : ", ") + d;
    throw ConfigError("checkpoint config differs from the requested one in: " + list);
  }
  Network net = restore(c);
  if (replace_head > 0) net.replace_head(replace_head, seed);
  return net;
}

Checkpoint capture_state(const Network& net, const Trainer& trainer) {
  Checkpoint c = capture(net);
  const auto& s = trainer.state();
  std::ostringstream rng;
  rng << s.rng;
  c.training = {{"epoch", std::to_string(s.epoch)},
                {"step", std::to_string(s.step)},
                {"best_score", exact(s.best_score)},
                {"best_epoch", std::to_string(s.best_epoch)},
                {"since_best", std::to_string(s.since_best)},
                {"rng", rng.str()}};
  c.moments = trainer.optimizer().moments();
  return c;
}

void restore_state(const Checkpoint& c, Network& net, Trainer& trainer) {
  if (!c.config.differences(net.config()).empty()) throw ConfigError("resume: network config differs from the state file");
  auto need = [&](const char* key) {
    const std::string* v = c.training_value(key);
    if (!v) throw IoError(std::string("resume: state file lacks '") + key + "'");
    return *v;
  };
  auto& s = trainer.state();
  s.epoch = static_cast<int>(parse_int("epoch", need("epoch")));
  s.step = parse_int("step", need("step"));
  s.best_score = parse_exact("best_score", need("best_score"));
  s.best_epoch = static_cast<int>(parse_int("best_epoch", need("best_epoch")));
  s.since_best = static_cast<int>(parse_int("since_best", need("since_best")));
  std::istringstream rng(need("rng"));
  rng >> s.rng;
  if (!rng) throw IoError("resume: bad rng state");
  fill_parameters(c, net);
  auto& moments = trainer.optimizer().moments();
  moments.clear();
  for (const auto& [name, m] : c.moments) moments.emplace(name, m);
}

// ---- bundles --------------------------------------------------------------

void save_bundle(const fs::path& dir, const DatasetBundle& bundle, uint64_t seed) {
  bundle.validate();
  fs::create_directories(dir);
  std::ostringstream os;
  os << "# firenet dataset bundle\nformat_version = 1\nseed = " << seed << "\n";
  for (const auto& d : bundle.datasets) {
    fs::create_directories(dir / d.name);
    os << "dataset = " << d.name << "\nclasses = " << join_names(d.class_names) << "\n";
    for (const auto* split : {&d.train, &d.val}) {
      for (const auto& p : *split) {
        const std::string img = d.name + "/" + p.name + "_image.vol", lab = d.name + "/" + p.name + "_labels.vol";
        save_volume(dir / img, image_volume(p.image, p.spacing));
        save_volume(dir / lab, label_volume(p.labels, p.extent(), p.spacing, d.class_names));
        os << (split == &d.train ? "train" : "val") << " = " << p.name << " " << img << " " << lab << "\n";
      }
    }
  }
  write_file_atomic(dir / "manifest.txt", os.str());
}

DatasetBundle load_bundle(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  DatasetBundle b;
  for (const auto& [key, v] : parse_key_values(read_file(manifest))) {
    if (key == "format_version") {
      if (parse_int(key, v) != 1) throw IoError(manifest.string() + ": unsupported format_version " + v);
    } else if (key == "seed") {
      parse_int(key, v);
    } else if (key == "dataset") {
      b.datasets.emplace_back();
      b.datasets.back().name = v;
    } else if (key == "classes" || key == "train" || key == "val") {
      if (b.datasets.empty()) throw IoError(manifest.string() + ": '" + key + "' before any dataset");
      auto& d = b.datasets.back();
      if (key == "classes") {
        d.class_names = split_names(v);
        continue;
      }
      const auto w = words(v);
      if (w.size() != 3) throw IoError(manifest.string() + ": example line needs name, image and label files");
      SamplePair p;
      p.name = w[0];
      const Volume img = load_volume(dir / w[1]), lab = load_volume(dir / w[2]);
      if (img.channels != 1) throw ShapeError(w[1] + ": image volumes must have one channel");
      if (img.dims != lab.dims) throw ShapeError(p.name + ": image and label dims differ");
      p.image = volume_tensor(img);
      p.labels = volume_labels(lab);
      p.spacing = img.spacing;
      (key == "train" ? d.train : d.val).push_back(std::move(p));
    } else {
      throw IoError(manifest.string() + ": unknown key '" + key + "'");
    }
  }
  b.validate();
  return b;
}

}  // namespace firenet
