#include "firenet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "firenet/error.hpp"
#include "firenet/textconfig.hpp"

namespace firenet::inline FIRENET_ABI {

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
}

ShapeInstance random_shape(ShapeKind kind, const Extent3& e, Rng& rng) {
  ShapeInstance s;
  s.kind = kind;
  for (int a = 0; a < 3; ++a) {
    const double n = static_cast<double>(e[a]);
    s.radii[a] = std::max(2.5, uniform(rng, 0.12, 0.25) * n);
    s.centre[a] = uniform(rng, s.radii[a] + 1.0, n - 2.0 - s.radii[a]);
  }
  return s;
}

// Fraction of each class's own voxels still visible after later shapes paint over it.
bool classes_visible(const std::vector<ShapeInstance>& shapes, const std::vector<int>& labels,
                     const Extent3& e) {
  std::vector<int64_t> own(shapes.size(), 0), seen(shapes.size(), 0);
  for (int64_t d = 0; d < e[0]; ++d)
    for (int64_t h = 0; h < e[1]; ++h)
      for (int64_t w = 0; w < e[2]; ++w) {
        const int l = labels[static_cast<std::size_t>(voxel_index(e, d, h, w))];
        for (std::size_t k = 0; k < shapes.size(); ++k) {
          if (shapes[k].contains(static_cast<double>(d), static_cast<double>(h), static_cast<double>(w))) ++own[k];
        }
        if (l > 0) ++seen[static_cast<std::size_t>(l - 1)];
      }
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (own[k] == 0 || seen[k] * 2 < own[k]) return false;
  }
  return true;
}

}  // namespace

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Ellipsoid: return "ellipsoid";
    case ShapeKind::Box: return "box";
    case ShapeKind::Shell: return "shell";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& s) {
  if (s == "ellipsoid") return ShapeKind::Ellipsoid;
  if (s == "box") return ShapeKind::Box;
  if (s == "shell") return ShapeKind::Shell;
  throw ConfigError("unknown shape '" + s + "' (expected ellipsoid, box or shell)");
}

bool ShapeInstance::contains(double d, double h, double w) const {
  const double u[3] = {(d - centre[0]) / radii[0], (h - centre[1]) / radii[1],
                       (w - centre[2]) / radii[2]};
  if (kind == ShapeKind::Box) {
    return std::fabs(u[0]) <= 1.0 && std::fabs(u[1]) <= 1.0 && std::fabs(u[2]) <= 1.0;
  }
  const double r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
  if (kind == ShapeKind::Ellipsoid) return r2 <= 1.0;
  return r2 <= 1.0 && r2 >= inner * inner;
}

int SyntheticSpec::classes_of(int dataset) const {
  return classes.size() == 1 ? classes[0] : classes[static_cast<std::size_t>(dataset)];
}

void SyntheticSpec::validate() const {
  if (n_datasets < 1) throw ConfigError("synth: n_datasets must be >= 1");
  if (static_cast<int>(resolutions.size()) != n_datasets) {
    throw ConfigError("synth: need one resolution range per dataset");
  }
  for (const auto& [lo, hi] : resolutions) {
    if (lo < 8 || hi < lo) throw ConfigError("synth: resolution ranges must satisfy 8 <= lo <= hi");
  }
  if (n_examples < 1) throw ConfigError("synth: n_examples must be >= 1");
  if (n_val < 0 || n_val >= n_examples) throw ConfigError("synth: need 0 <= n_val < n_examples");
  if (classes.size() != 1 && static_cast<int>(classes.size()) != n_datasets) {
    throw ConfigError("synth: classes needs one entry or one per dataset");
  }
  for (int k : classes) {
    if (k < 2) throw ConfigError("synth: every dataset needs >= 2 classes");
  }
  if (shapes.empty()) throw ConfigError("synth: shape vocabulary is empty");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "n_datasets = " << n_datasets << "\nresolutions = ";
  for (std::size_t k = 0; k < resolutions.size(); ++k) {
    os << (k ? ", " : "") << resolutions[k].first << "-" << resolutions[k].second;
  }
  os << "\nn_examples = " << n_examples << "\nn_val = " << n_val << "\nclasses = ";
  for (std::size_t k = 0; k < classes.size(); ++k) os << (k ? "," : "") << classes[k];
  os << "\nshapes = ";
  for (std::size_t k = 0; k < shapes.size(); ++k) os << (k ? ", " : "") << shape_name(shapes[k]);
  os << "\nnoise = " << noise << "\nseed = " << seed << "\n";
  return os.str();
}

SyntheticSpec SyntheticSpec::from_text(const std::string& text) {
  SyntheticSpec s;
  for (const auto& [key, v] : parse_key_values(text)) {
    if (key == "n_datasets") {
      s.n_datasets = static_cast<int>(parse_int(key, v));
    } else if (key == "resolutions") {
      s.resolutions.clear();
      std::stringstream ss(v);
      for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
          const int64_t r = parse_int(key, item);
          s.resolutions.emplace_back(r, r);
        } else {
          s.resolutions.emplace_back(parse_int(key, trim(item.substr(0, dash))),
                                     parse_int(key, trim(item.substr(dash + 1))));
        }
      }
    } else if (key == "n_examples") {
      s.n_examples = static_cast<int>(parse_int(key, v));
    } else if (key == "n_val") {
      s.n_val = static_cast<int>(parse_int(key, v));
    } else if (key == "classes") {
      s.classes.clear();
      for (auto k : parse_int_list(key, v)) s.classes.push_back(static_cast<int>(k));
    } else if (key == "shapes") {
      s.shapes.clear();
      std::stringstream ss(v);
      for (std::string item; std::getline(ss, item, ',');) s.shapes.push_back(parse_shape(trim(item)));
    } else if (key == "noise") {
      s.noise = parse_double(key, v);
    } else if (key == "seed") {
      s.seed = static_cast<uint64_t>(parse_int(key, v));
    } else {
      throw ConfigError("synth spec: unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

SamplePair render(const Extent3& e, const std::vector<ShapeInstance>& shapes,
                  const std::vector<double>& bands, double noise, Rng& rng) {
  if (bands.size() < shapes.size() + 1) throw ConfigError("render: need one band per class");
  SamplePair p;
  const auto n = static_cast<std::size_t>(e[0] * e[1] * e[2]);
  p.labels.assign(n, 0);
  std::vector<real> img(n);
  for (int64_t d = 0; d < e[0]; ++d)
    for (int64_t h = 0; h < e[1]; ++h)
      for (int64_t w = 0; w < e[2]; ++w) {
        int l = 0;
        for (std::size_t k = 0; k < shapes.size(); ++k) {
          if (shapes[k].contains(static_cast<double>(d), static_cast<double>(h), static_cast<double>(w))) {
            l = static_cast<int>(k) + 1;
          }
        }
        const auto i = static_cast<std::size_t>(voxel_index(e, d, h, w));
        p.labels[i] = l;
        img[i] = static_cast<real>(bands[static_cast<std::size_t>(l)] +
                                   (noise > 0.0 ? noise * standard_normal(rng) : 0.0));
      }
  p.image = Tensor5(Shape(1, 1, e[0], e[1], e[2]), std::move(img));
  return p;
}

DatasetBundle generate(const SyntheticSpec& spec) {
  spec.validate();
  DatasetBundle bundle;
  for (int ds = 0; ds < spec.n_datasets; ++ds) {
    Rng rng(spec.seed * 1000003ULL + static_cast<uint64_t>(ds));
    Dataset d;
    d.name = "synth" + std::to_string(ds + 1);
    const int K = spec.classes_of(ds);
    d.class_names.push_back("background");
    for (int k = 1; k < K; ++k) {
      const auto kind = spec.shapes[static_cast<std::size_t>(k - 1) % spec.shapes.size()];
      std::string name = shape_name(kind);
      if (k > static_cast<int>(spec.shapes.size())) name += std::to_string(k);
      d.class_names.push_back(name);
    }
    // Per-dataset contrast, standing in for different acquisition protocols.
    const double scale = uniform(rng, 0.8, 1.2), offset = uniform(rng, -0.2, 0.2);
    const auto [lo, hi] = spec.resolutions[static_cast<std::size_t>(ds)];
    for (int ex = 0; ex < spec.n_examples; ++ex) {
      Extent3 e;
      for (auto& v : e) v = ex == 0 ? lo : ex == 1 ? hi : uniform_int(rng, lo, hi);
      std::vector<double> bands(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) bands[k] = offset + scale * (k + uniform(rng, -0.1, 0.1));
      std::vector<ShapeInstance> shapes;
      SamplePair p;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 200) throw ConfigError("synth: cannot place every class in " + d.name);
        shapes.clear();
        for (int k = 1; k < K; ++k) {
          shapes.push_back(random_shape(spec.shapes[static_cast<std::size_t>(k - 1) % spec.shapes.size()], e, rng));
        }
        p = render(e, shapes, bands, spec.noise * scale, rng);
        if (classes_visible(shapes, p.labels, e)) break;
      }
      p.name = d.name + "_" + std::to_string(ex + 1);
      (ex < spec.n_examples - spec.n_val ? d.train : d.val).push_back(std::move(p));
    }
    bundle.datasets.push_back(std::move(d));
  }
  return bundle;
}

}  // namespace firenet
