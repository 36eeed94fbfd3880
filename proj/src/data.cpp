#include "sscl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include <png.h>

namespace sscl {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::string shape_text(InputShape s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

InputShape parse_shape(const std::string& text) {
  const auto parts = split_on(text, 'x');
  require(parts.size() == 3, ErrorKind::Data, "shape must be CxHxW: " + text);
  InputShape s{static_cast<int>(parse_int(parts[0])), static_cast<int>(parse_int(parts[1])),
               static_cast<int>(parse_int(parts[2]))};
  require(s.channels > 0 && s.height > 0 && s.width > 0, ErrorKind::Data, "shape must be positive: " + text);
  return s;
}

std::string synthetic_text(const SyntheticSpec& s) {
  return "classes=" + std::to_string(s.classes) + " shape=" + shape_text(s.shape) +
         " train=" + std::to_string(s.train_per_class) + " test=" + std::to_string(s.test_per_class) +
         " separation=" + format_double(s.separation) + " noise=" + format_double(s.noise) +
         " seed=" + std::to_string(s.seed);
}

SyntheticSpec parse_synthetic(const std::string& text) {
  SyntheticSpec s;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    require(eq != std::string::npos, ErrorKind::Data, "malformed synthetic field: " + tok);
    const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
    if (k == "classes") s.classes = static_cast<int>(parse_int(v));
    else if (k == "shape") s.shape = parse_shape(v);
    else if (k == "train") s.train_per_class = static_cast<int>(parse_int(v));
    else if (k == "test") s.test_per_class = static_cast<int>(parse_int(v));
    else if (k == "separation") s.separation = parse_double(v);
    else if (k == "noise") s.noise = parse_double(v);
    else if (k == "seed") s.seed = static_cast<std::uint64_t>(parse_int(v));
    else fail(ErrorKind::Data, "unknown synthetic field: " + k);
  }
  require(s.classes > 0, ErrorKind::Data, "synthetic classes must be positive");
  return s;
}

// Class means at pairwise distance `separation`: scaled orthonormal columns
// when the dimension allows it, scaled random unit directions otherwise.
Matrix synthetic_means(const SyntheticSpec& spec) {
  const Eigen::Index dim = spec.shape.size();
  Rng rng = make_stream(spec.seed, "synthetic-means");
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix g(dim, spec.classes);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
  Matrix dirs(dim, spec.classes);
  if (spec.classes <= dim) {
    const Eigen::MatrixXd gc = g;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gc);
    dirs = qr.householderQ() * Eigen::MatrixXd::Identity(dim, spec.classes);
  } else {
    for (int c = 0; c < spec.classes; ++c) dirs.col(c) = g.col(c) / g.col(c).norm();
  }
  return dirs.transpose() * (spec.separation / std::numbers::sqrt2);
}

Vector synthetic_draw(const SyntheticSpec& spec, const Matrix& means, int c, int index) {
  require(c >= 0 && c < spec.classes, ErrorKind::Data, "synthetic class out of range");
  Rng rng = make_stream(spec.seed, "synthetic-sample", static_cast<std::uint64_t>(c),
                        static_cast<std::uint64_t>(index));
  std::normal_distribution<double> n(0.0, spec.noise);
  Vector v(means.cols());
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = means(c, j) + n(rng);
  return v;
}

// "synthetic/<class>/<index>"
std::pair<int, int> parse_synthetic_path(const std::string& path) {
  const auto parts = split_on(path, '/');
  require(parts.size() == 3 && parts[0] == "synthetic", ErrorKind::Data, "not a synthetic sample path: " + path);
  return {static_cast<int>(parse_int(parts[1])), static_cast<int>(parse_int(parts[2]))};
}

class SyntheticLoader final : public SampleLoader {
 public:
  explicit SyntheticLoader(SyntheticSpec spec) : spec_(spec), means_(synthetic_means(spec)) {}
  InputShape shape() const override { return spec_.shape; }
  Vector load(const std::string& path) const override {
    const auto [c, i] = parse_synthetic_path(path);
    return synthetic_draw(spec_, means_, c, i);
  }

 private:
  SyntheticSpec spec_;
  Matrix means_;
};

struct RawImage {
  InputShape shape;
  Vector values;
};

// Binary PGM (P5) and PPM (P6) with maxval <= 255.
RawImage read_pnm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open " + file.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  const std::string magic = token();
  require(magic == "P5" || magic == "P6", ErrorKind::Data, "unsupported image format in " + file.string());
  const int w = static_cast<int>(parse_int(token()));
  const int h = static_cast<int>(parse_int(token()));
  const int maxval = static_cast<int>(parse_int(token()));
  require(w > 0 && h > 0 && maxval > 0 && maxval <= 255, ErrorKind::Data, "bad image header in " + file.string());
  const int c = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * c);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(in.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorKind::Data,
          "truncated image " + file.string());
  RawImage img{{c, h, w}, Vector(c * h * w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        img.values((k * h + y) * w + x) = bytes[(static_cast<std::size_t>(y) * w + x) * c + k] / double(maxval);
  return img;
}

RawImage read_png(const fs::path& file) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_file(&image, file.c_str()) != 0, ErrorKind::Data,
          "cannot read PNG " + file.string());
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr) == 0) {
    png_image_free(&image);
    fail(ErrorKind::Data, "cannot decode PNG " + file.string());
  }
  const int c = gray ? 1 : 3, h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  RawImage img{{c, h, w}, Vector(c * h * w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        img.values((k * h + y) * w + x) = buf[(static_cast<std::size_t>(y) * w + x) * c + k] / 255.0;
  return img;
}

RawImage read_image(const fs::path& file) {
  auto ext = file.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".png") return read_png(file);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(file);
  fail(ErrorKind::Data, "unsupported image extension: " + file.string());
}

class ImageDirectoryLoader final : public SampleLoader {
 public:
  ImageDirectoryLoader(fs::path root, std::string probe, std::optional<int> resize)
      : root_(std::move(root)), resize_(resize) {
    const RawImage first = read_image(root_ / probe);
    native_ = first.shape;
    shape_ = resize_ ? InputShape{native_.channels, *resize_, *resize_} : native_;
  }
  InputShape shape() const override { return shape_; }
  Vector load(const std::string& path) const override {
    RawImage img = read_image(root_ / path);
    if (resize_) return resize_bilinear(img.values, img.shape, *resize_, *resize_);
    require(img.shape == native_, ErrorKind::Data, "image size differs from the first sample: " + path);
    return img.values;
  }

 private:
  fs::path root_;
  std::optional<int> resize_;
  InputShape native_;
  InputShape shape_;
};

}  // namespace

// ---- manifests ----------------------------------------------------------

int Manifest::class_count() const {
  int n = static_cast<int>(class_names.size());
  if (synthetic) n = std::max(n, synthetic->classes);
  for (const auto& r : records) n = std::max(n, r.class_index + 1);
  return n;
}

std::string Manifest::class_name(int c) const {
  if (c >= 0 && c < static_cast<int>(class_names.size())) return class_names[static_cast<std::size_t>(c)];
  return "class" + std::to_string(c);
}

Manifest load_manifest(const fs::path& file) {
  std::ifstream in(file);
  require(in.good(), ErrorKind::Data, "cannot open manifest " + file.string());
  Manifest m;
  m.root = file.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
      if (key == "classes") {
        m.class_names.clear();
        for (auto& n : split_on(value, ',')) m.class_names.push_back(trim(n));
      } else if (key == "synthetic") {
        m.synthetic = parse_synthetic(value);
      } else if (key == "resize") {
        m.resize_to = static_cast<int>(parse_int(value));
      }
      continue;
    }
    const auto fields = split_on(line, '\t');
    require(fields.size() == 3, ErrorKind::Data,
            file.string() + ":" + std::to_string(lineno) + ": expected path<TAB>class<TAB>split");
    ManifestRecord r{fields[0], 0, trim(fields[2])};
    try {
      r.class_index = static_cast<int>(parse_int(trim(fields[1])));
    } catch (const Error&) {
      fail(ErrorKind::Data, file.string() + ":" + std::to_string(lineno) + ": bad class index");
    }
    require(r.class_index >= 0, ErrorKind::Data, file.string() + ":" + std::to_string(lineno) + ": negative class");
    m.records.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& file) {
  std::ofstream out(file);
  require(out.good(), ErrorKind::Io, "cannot write manifest " + file.string());
  if (!m.class_names.empty()) {
    out << "# classes = ";
    for (std::size_t i = 0; i < m.class_names.size(); ++i) out << (i ? "," : "") << m.class_names[i];
    out << "\n";
  }
  if (m.synthetic) out << "# synthetic = " << synthetic_text(*m.synthetic) << "\n";
  if (m.resize_to) out << "# resize = " << *m.resize_to << "\n";
  for (const auto& r : m.records) out << r.path << '\t' << r.class_index << '\t' << r.split << '\n';
  require(out.good(), ErrorKind::Io, "failed writing " + file.string());
}

Manifest synthetic_manifest(const SyntheticSpec& spec) {
  require(spec.classes > 0 && spec.train_per_class >= 0 && spec.test_per_class >= 0, ErrorKind::Config,
          "synthetic counts must be non-negative with at least one class");
  require(spec.shape.size() > 0 && spec.noise >= 0.0 && spec.separation >= 0.0, ErrorKind::Config,
          "synthetic shape, noise and separation must be valid");
  Manifest m;
  m.synthetic = spec;
  for (int c = 0; c < spec.classes; ++c) {
    for (int i = 0; i < spec.train_per_class + spec.test_per_class; ++i) {
      m.records.push_back({"synthetic/" + std::to_string(c) + "/" + std::to_string(i), c,
                           i < spec.train_per_class ? "train" : "test"});
    }
  }
  return m;
}

// ---- loading ------------------------------------------------------------

std::unique_ptr<SampleLoader> make_loader(const Manifest& m) {
  if (m.synthetic) {
    require(!m.resize_to || !m.synthetic->shape.is_image() || *m.resize_to == m.synthetic->shape.height,
            ErrorKind::Misuse, "synthetic manifests are generated at their native size");
    return std::make_unique<SyntheticLoader>(*m.synthetic);
  }
  require(!m.records.empty(), ErrorKind::Data, "manifest has no records");
  return std::make_unique<ImageDirectoryLoader>(m.root, m.records.front().path, m.resize_to);
}

Vector synthetic_sample(const SyntheticSpec& spec, int class_index, int index) {
  return synthetic_draw(spec, synthetic_means(spec), class_index, index);
}

Vector resize_bilinear(const Vector& image, InputShape from, int height, int width) {
  require(image.size() == from.size(), ErrorKind::Shape, "image size does not match its shape");
  require(height > 0 && width > 0, ErrorKind::Config, "resize target must be positive");
  if (from.height == height && from.width == width) return image;
  Vector out(from.channels * height * width);
  const double sy = double(from.height) / height, sx = double(from.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(from.height - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, from.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(from.width - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, from.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < from.channels; ++c) {
        auto at = [&](int yy, int xx) { return image((c * from.height + yy) * from.width + xx); };
        out((c * height + y) * width + x) = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                            wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      }
    }
  }
  return out;
}

Manifest resize_inputs(const Manifest& m, int target) {
  require(target > 0, ErrorKind::Config, "resize target must be positive");
  const bool image = m.synthetic ? m.synthetic->shape.is_image() : true;
  require(image, ErrorKind::Misuse, "resize_inputs needs image samples; this manifest holds feature vectors");
  Manifest out = m;
  if (m.synthetic) {
    require(m.synthetic->shape.height == target && m.synthetic->shape.width == target, ErrorKind::Misuse,
            "synthetic manifests are generated at their native size");
    return out;
  }
  out.resize_to = target;
  return out;
}

// ---- splits -------------------------------------------------------------

namespace {

std::map<int, std::vector<const ManifestRecord*>> records_by_class(const Manifest& m, const std::string& split) {
  std::map<int, std::vector<const ManifestRecord*>> out;
  for (const auto& r : m.records)
    if (r.split == split) out[r.class_index].push_back(&r);
  return out;
}

void check_classes(const std::vector<int>& classes, int count, const std::string& what) {
  std::set<int> seen;
  for (int c : classes) {
    require(c >= 0 && c < count, ErrorKind::Config, what + " class " + std::to_string(c) + " not in manifest");
    require(seen.insert(c).second, ErrorKind::Config, what + " class " + std::to_string(c) + " listed twice");
  }
}

std::vector<const ManifestRecord*> shuffled(std::vector<const ManifestRecord*> v, std::uint64_t seed, int c) {
  Rng rng = make_stream(seed, "split", static_cast<std::uint64_t>(c));
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

}  // namespace

DatasetSplit build_mismatch_split(const Manifest& manifest, const MismatchSplitOptions& o) {
  require(o.mismatch_ratio >= 0.0 && o.mismatch_ratio <= 1.0, ErrorKind::Config, "mismatch ratio must be in [0, 1]");
  require(o.unlabeled_slots >= 0 && o.labeled_per_class >= 0 && o.val_per_class >= 0, ErrorKind::Config,
          "split counts must be non-negative");
  const double ood_slots_real = o.mismatch_ratio * o.unlabeled_slots;
  const long ood_slots = std::lround(ood_slots_real);
  require(std::abs(ood_slots_real - static_cast<double>(ood_slots)) < 1e-9, ErrorKind::Config,
          "mismatch ratio x unlabeled slots = " + format_double(ood_slots_real) + " is not an integer");
  const long id_slots = o.unlabeled_slots - ood_slots;
  require(!o.id_classes.empty(), ErrorKind::Config, "at least one ID class is required");
  const int count = manifest.class_count();
  check_classes(o.id_classes, count, "ID");
  check_classes(o.ood_classes, count, "OOD");
  for (int c : o.ood_classes)
    require(std::find(o.id_classes.begin(), o.id_classes.end(), c) == o.id_classes.end(), ErrorKind::Config,
            "class " + std::to_string(c) + " is both ID and OOD");
  require(id_slots <= static_cast<long>(o.id_classes.size()), ErrorKind::Config, "more ID slots than ID classes");
  require(ood_slots <= static_cast<long>(o.ood_classes.size()), ErrorKind::Config, "more OOD slots than OOD classes");

  const auto train = records_by_class(manifest, "train");
  const auto test = records_by_class(manifest, "test");
  const std::size_t carve = static_cast<std::size_t>(o.labeled_per_class) + o.val_per_class;

  // Remaining training samples of every class after the labeled/validation carve.
  std::map<int, std::vector<const ManifestRecord*>> rest;
  DatasetSplit s;
  s.id_classes = o.id_classes;
  s.ood_classes = o.ood_classes;
  s.mismatch_ratio = o.unlabeled_slots == 0 ? 0.0 : double(ood_slots) / o.unlabeled_slots;
  auto carve_class = [&](int c) {
    const auto it = train.find(c);
    const std::size_t have = it == train.end() ? 0 : it->second.size();
    require(have >= carve, ErrorKind::Data,
            "class " + manifest.class_name(c) + " has " + std::to_string(have) + " training samples, needs " +
                std::to_string(carve));
    auto order = shuffled(it->second, o.seed, c);
    return order;
  };
  for (std::size_t k = 0; k < o.id_classes.size(); ++k) {
    const int c = o.id_classes[k];
    const auto order = carve_class(c);
    const ClassLabel label(static_cast<std::int32_t>(k));
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < static_cast<std::size_t>(o.labeled_per_class)) s.labeled.push_back({order[i]->path, label, c});
      else if (i < carve) s.validation.push_back({order[i]->path, label, c});
      else rest[c].push_back(order[i]);
    }
    if (const auto t = test.find(c); t != test.end())
      for (const auto* r : t->second) s.test.push_back({r->path, label, c});
  }
  for (int c : o.ood_classes) {
    const auto order = carve_class(c);
    rest[c].assign(order.begin() + static_cast<std::ptrdiff_t>(carve), order.end());
  }

  std::vector<int> slots(o.id_classes.end() - id_slots, o.id_classes.end());
  slots.insert(slots.end(), o.ood_classes.begin(), o.ood_classes.begin() + ood_slots);
  for (int c : slots)
    for (const auto* r : rest[c]) s.unlabeled.push_back({r->path, kUnlabeled, c});
  return s;
}

DatasetSplit build_cross_dataset_split(const Manifest& labeled_manifest, const Manifest& unlabeled_manifest,
                                       double declared_mismatch_ratio, const CrossDatasetCounts& counts,
                                       std::uint64_t seed) {
  require(declared_mismatch_ratio >= 0.0 && declared_mismatch_ratio <= 1.0, ErrorKind::Config,
          "declared mismatch ratio must be in [0, 1]");
  const auto train = records_by_class(labeled_manifest, "train");
  require(!train.empty(), ErrorKind::Data, "labeled manifest has no training records");
  MismatchSplitOptions o;
  for (const auto& [c, recs] : train) o.id_classes.push_back(c);
  o.mismatch_ratio = 0.0;
  o.labeled_per_class = counts.labeled_per_class;
  o.val_per_class = counts.val_per_class;
  o.unlabeled_slots = 0;
  o.seed = seed;
  DatasetSplit s = build_mismatch_split(labeled_manifest, o);
  for (const auto& r : unlabeled_manifest.records)
    if (r.split == "train") s.unlabeled.push_back({r.path, kUnlabeled, r.class_index});
  require(!s.unlabeled.empty(), ErrorKind::Data, "unlabeled manifest has no training records");
  s.mismatch_ratio = declared_mismatch_ratio;
  return s;
}

std::vector<int> unlabeled_classes(const DatasetSplit& split) {
  std::vector<int> out;
  for (const auto& e : split.unlabeled)
    if (out.empty() || out.back() != e.audit_class) out.push_back(e.audit_class);
  return out;
}

namespace {

nlohmann::json pool_json(const std::vector<LabeledExample>& pool) {
  auto arr = nlohmann::json::array();
  for (const auto& e : pool) arr.push_back({e.source_id, e.label.value(), e.audit_class});
  return arr;
}

std::vector<LabeledExample> pool_from_json(const nlohmann::json& arr) {
  std::vector<LabeledExample> out;
  for (const auto& item : arr) {
    out.push_back({item.at(0).get<std::string>(), ClassLabel(item.at(1).get<std::int32_t>()), item.at(2).get<int>()});
  }
  return out;
}

}  // namespace

void save_split(const DatasetSplit& split, const fs::path& file) {
  nlohmann::json j;
  j["format"] = "sscl-split";
  j["version"] = 1;
  j["manifest"] = split.manifest.string();
  j["unlabeled_manifest"] = split.unlabeled_manifest.string();
  j["mismatch_ratio"] = split.mismatch_ratio;
  j["id_classes"] = split.id_classes;
  j["ood_classes"] = split.ood_classes;
  j["labeled"] = pool_json(split.labeled);
  j["unlabeled"] = pool_json(split.unlabeled);
  j["validation"] = pool_json(split.validation);
  j["test"] = pool_json(split.test);
  std::ofstream out(file);
  require(out.good(), ErrorKind::Io, "cannot write split descriptor " + file.string());
  out << j.dump(1) << "\n";
  require(out.good(), ErrorKind::Io, "failed writing " + file.string());
}

DatasetSplit load_split(const fs::path& file) {
  std::ifstream in(file);
  require(in.good(), ErrorKind::Data, "cannot open split descriptor " + file.string());
  try {
    const auto j = nlohmann::json::parse(in);
    require(j.at("format") == "sscl-split" && j.at("version") == 1, ErrorKind::Data,
            "unsupported split descriptor " + file.string());
    DatasetSplit s;
    s.manifest = j.at("manifest").get<std::string>();
    s.unlabeled_manifest = j.at("unlabeled_manifest").get<std::string>();
    s.mismatch_ratio = j.at("mismatch_ratio").get<double>();
    s.id_classes = j.at("id_classes").get<std::vector<int>>();
    s.ood_classes = j.at("ood_classes").get<std::vector<int>>();
    s.labeled = pool_from_json(j.at("labeled"));
    s.unlabeled = pool_from_json(j.at("unlabeled"));
    s.validation = pool_from_json(j.at("validation"));
    s.test = pool_from_json(j.at("test"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, "malformed split descriptor " + file.string() + ": " + e.what());
  }
}

MaterializedPool materialize(const std::vector<LabeledExample>& pool, const SampleLoader& loader) {
  MaterializedPool p;
  p.shape = loader.shape();
  p.inputs.resize(static_cast<Eigen::Index>(pool.size()), p.shape.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Vector v = loader.load(pool[i].source_id);
    require(v.size() == p.shape.size(), ErrorKind::Data, "sample size mismatch: " + pool[i].source_id);
    p.inputs.row(static_cast<Eigen::Index>(i)) = v.transpose();
    p.labels.push_back(pool[i].label);
    p.audit_classes.push_back(pool[i].audit_class);
    p.source_ids.push_back(pool[i].source_id);
  }
  return p;
}

TrainingData load_training_data(const DatasetSplit& split, const Manifest& manifest,
                                const Manifest& unlabeled_manifest) {
  const auto loader = make_loader(manifest);
  const auto uloader = make_loader(unlabeled_manifest);
  require(loader->shape() == uloader->shape(), ErrorKind::Data, "labeled and unlabeled inputs differ in shape");
  return {materialize(split.labeled, *loader), materialize(split.unlabeled, *uloader),
          materialize(split.validation, *loader), materialize(split.test, *loader)};
}

TrainingData load_training_data(const DatasetSplit& split) {
  const Manifest m = load_manifest(split.manifest);
  if (split.unlabeled_manifest.empty() || split.unlabeled_manifest == split.manifest)
    return load_training_data(split, m, m);
  return load_training_data(split, m, load_manifest(split.unlabeled_manifest));
}

// ---- augmentation -------------------------------------------------------

AugmentationPolicy AugmentationPolicy::contrastive_pretrain() {
  AugmentationPolicy p;
  p.kind = Kind::ContrastivePretrain;
  p.crop_scale_min = 0.2;
  p.crop_scale_max = 1.0;
  p.flip_prob = 0.5;
  p.jitter_prob = 0.8;
  p.brightness = 0.4;
  p.contrast = 0.4;
  p.saturation = 0.4;
  p.hue = 0.1;
  p.grayscale_prob = 0.2;
  return p;
}

AugmentationPolicy AugmentationPolicy::probe_finetune() {
  AugmentationPolicy p;
  p.kind = Kind::ProbeFinetune;
  p.crop_scale_min = 0.08;
  p.crop_scale_max = 1.0;
  p.flip_prob = 0.5;
  return p;
}

AugmentationPolicy AugmentationPolicy::none() { return AugmentationPolicy{}; }

AugmentationPolicy AugmentationPolicy::identity_pretrain() {
  AugmentationPolicy p;
  p.kind = Kind::ContrastivePretrain;
  return p;
}

const char* to_string(AugmentationPolicy::Kind kind) {
  switch (kind) {
    case AugmentationPolicy::Kind::ContrastivePretrain: return "contrastive-pretrain";
    case AugmentationPolicy::Kind::ProbeFinetune: return "probe-finetune";
    case AugmentationPolicy::Kind::None: return "none";
  }
  return "none";
}

Rng augmentation_stream(std::uint64_t seed, const std::string& source_id, int epoch) {
  return make_stream(seed, "augment", hash_name(source_id), static_cast<std::uint64_t>(epoch));
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
bool coin(Rng& rng, double p) { return p > 0.0 && uniform(rng, 0.0, 1.0) < p; }

// Per-pixel gray level: luma weights for RGB, the channel mean otherwise.
Vector gray_plane(const Vector& x, InputShape s) {
  const int plane = s.height * s.width;
  Vector g = Vector::Zero(plane);
  const double rgb[3] = {0.299, 0.587, 0.114};
  for (int c = 0; c < s.channels; ++c) {
    const double wgt = s.channels == 3 ? rgb[c] : 1.0 / s.channels;
    g += wgt * x.segment(c * plane, plane);
  }
  return g;
}

Vector random_resized_crop(const Vector& x, InputShape s, double scale_min, double scale_max, Rng& rng) {
  const double area = double(s.height) * s.width;
  int ch = s.height, cw = s.width, top = 0, left = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, scale_min, scale_max);
    const double ratio = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= s.width && h <= s.height) {
      ch = h;
      cw = w;
      top = std::uniform_int_distribution<int>(0, s.height - h)(rng);
      left = std::uniform_int_distribution<int>(0, s.width - w)(rng);
      break;
    }
  }
  Vector crop(s.channels * ch * cw);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < ch; ++y)
      for (int xx = 0; xx < cw; ++xx)
        crop((c * ch + y) * cw + xx) = x((c * s.height + top + y) * s.width + left + xx);
  return resize_bilinear(crop, {s.channels, ch, cw}, s.height, s.width);
}

Vector hflip(const Vector& x, InputShape s) {
  Vector out(x.size());
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int xx = 0; xx < s.width; ++xx)
        out((c * s.height + y) * s.width + xx) = x((c * s.height + y) * s.width + (s.width - 1 - xx));
  return out;
}

void jitter(Vector& x, InputShape s, const AugmentationPolicy& p, Rng& rng) {
  const int plane = s.height * s.width;
  if (p.brightness > 0.0) x *= uniform(rng, std::max(0.0, 1.0 - p.brightness), 1.0 + p.brightness);
  if (p.contrast > 0.0) {
    const double f = uniform(rng, std::max(0.0, 1.0 - p.contrast), 1.0 + p.contrast);
    const double mean = gray_plane(x, s).mean();
    x = (x.array() - mean) * f + mean;
  }
  if (p.saturation > 0.0) {
    const double f = uniform(rng, std::max(0.0, 1.0 - p.saturation), 1.0 + p.saturation);
    const Vector g = gray_plane(x, s);
    for (int c = 0; c < s.channels; ++c)
      x.segment(c * plane, plane) = g + f * (x.segment(c * plane, plane) - g);
  }
  if (p.hue > 0.0) {
    if (s.channels == 3) {
      // Rotation of the chroma plane in YIQ space.
      const double a = uniform(rng, -p.hue, p.hue) * 2.0 * std::numbers::pi;
      Eigen::Matrix3d to_yiq, rot = Eigen::Matrix3d::Identity();
      to_yiq << 0.299, 0.587, 0.114, 0.596, -0.274, -0.322, 0.211, -0.523, 0.312;
      rot(1, 1) = std::cos(a);
      rot(1, 2) = -std::sin(a);
      rot(2, 1) = std::sin(a);
      rot(2, 2) = std::cos(a);
      const Eigen::Matrix3d t = to_yiq.inverse() * rot * to_yiq;
      for (int i = 0; i < plane; ++i) {
        const Eigen::Vector3d px(x(i), x(plane + i), x(2 * plane + i));
        const Eigen::Vector3d q = t * px;
        for (int c = 0; c < 3; ++c) x(c * plane + i) = q(c);
      }
    } else {
      for (int c = 0; c < s.channels; ++c) x.segment(c * plane, plane) *= 1.0 + uniform(rng, -p.hue, p.hue);
    }
  }
}

}  // namespace

Vector augment(const Vector& x, InputShape shape, const AugmentationPolicy& policy, Rng& rng) {
  require(x.size() == shape.size(), ErrorKind::Shape, "sample size does not match its shape");
  if (policy.kind == AugmentationPolicy::Kind::None) return x;
  Vector v = x;
  if (shape.is_image()) {
    if (policy.crop_scale_min < 1.0) v = random_resized_crop(v, shape, policy.crop_scale_min, policy.crop_scale_max, rng);
    if (coin(rng, policy.flip_prob)) v = hflip(v, shape);
  }
  if (coin(rng, policy.jitter_prob)) jitter(v, shape, policy, rng);
  if (coin(rng, policy.grayscale_prob)) {
    const Vector g = gray_plane(v, shape);
    const int plane = shape.height * shape.width;
    for (int c = 0; c < shape.channels; ++c) v.segment(c * plane, plane) = g;
  }
  return v;
}

std::pair<Vector, Vector> augment_pair(const Vector& x, InputShape shape, const AugmentationPolicy& policy, Rng& rng) {
  require(policy.kind == AugmentationPolicy::Kind::ContrastivePretrain, ErrorKind::Misuse,
          std::string("two-view pairing needs the contrastive-pretrain policy, got ") + to_string(policy.kind));
  Vector a = augment(x, shape, policy, rng);
  Vector b = augment(x, shape, policy, rng);
  return {std::move(a), std::move(b)};
}

}  // namespace sscl
