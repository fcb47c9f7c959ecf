#include "spred/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "spred/random.hpp"

namespace spred::data {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : field.substr(b, e - b + 1));
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

std::vector<std::vector<double>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    std::vector<double> row(fields.size());
    bool ok = true;
    for (std::size_t i = 0; i < fields.size() && ok; ++i) ok = parse_double(fields[i], row[i]);
    if (!ok) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(rows.front().size()) + " fields, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw DataError(path.string() + ": no data rows");
  return rows;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated patch header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kPatchMagic[8] = {'S', 'P', 'A', 'T', 'C', 'H', '0', '1'};

}  // namespace

LabeledData LabeledData::subset(const std::vector<std::size_t>& rows) const {
  if (rows.empty()) throw DataError("empty subset");
  LabeledData out;
  out.classes = classes;
  const std::size_t d = X.cols();
  out.X = Tensor(Shape{rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < d; ++j) out.X(r, j) = X(rows[r], j);
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

Tensor load_csv_matrix(const std::filesystem::path& path) {
  const auto rows = read_rows(path);
  Tensor out(Shape{rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(i, j) = rows[i][j];
  return out;
}

LabeledData load_labeled_csv(const std::filesystem::path& path) {
  const auto rows = read_rows(path);
  const std::size_t d = rows.front().size();
  if (d < 2) throw DataError(path.string() + ": need at least one feature and a label column");
  std::map<long long, std::size_t> classes;
  for (const auto& r : rows) {
    const double l = r.back();
    if (l != std::floor(l)) throw DataError(path.string() + ": labels must be integers");
    classes.emplace(static_cast<long long>(l), 0);
  }
  std::size_t next = 0;
  for (auto& [label, idx] : classes) idx = next++;
  LabeledData out;
  out.classes = classes.size();
  out.X = Tensor(Shape{rows.size(), d - 1});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j + 1 < d; ++j) out.X(i, j) = rows[i][j];
    out.labels.push_back(classes.at(static_cast<long long>(rows[i].back())));
  }
  return out;
}

void write_patches(const std::filesystem::path& path, const Tensor& patches) {
  if (patches.rank() != 2) throw ShapeError("patches must be a matrix, got " + shape_to_string(patches.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kPatchMagic, 8);
  const std::size_t dim = patches.rows(), count = patches.cols();
  put_u64(out, dim);
  put_u64(out, count);
  for (std::size_t c = 0; c < count; ++c) {
    for (std::size_t r = 0; r < dim; ++r) put_u64(out, std::bit_cast<std::uint64_t>(patches(r, c)));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Tensor read_patches(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kPatchMagic, 8) != 0) {
    throw DataError(path.string() + ": not a SPATCH01 file");
  }
  const std::uint64_t dim = get_u64(in), count = get_u64(in);
  if (dim == 0 || count == 0) throw DataError(path.string() + ": empty patch set");
  Tensor out(Shape{dim, count});
  for (std::size_t c = 0; c < count; ++c)
    for (std::size_t r = 0; r < dim; ++r) out(r, c) = std::bit_cast<double>(get_u64(in));
  return out;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto token = [&in]() {
    std::string t;
    while (in >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return t;
    }
    throw DataError("truncated PGM header");
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw DataError(path.string() + ": unsupported PGM type " + magic);
  const std::size_t w = std::stoul(token()), h = std::stoul(token());
  const double maxval = std::stod(token());
  if (w == 0 || h == 0 || maxval <= 0 || maxval > 65535) throw DataError(path.string() + ": bad PGM header");
  Tensor img(Shape{h, w});
  if (magic == "P2") {
    for (auto& v : img.data()) v = std::stod(token()) / maxval;
    return img;
  }
  in.get();  // single whitespace after maxval
  const bool wide = maxval > 255;
  for (auto& v : img.data()) {
    unsigned char b[2] = {0, 0};
    if (!in.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) throw DataError(path.string() + ": truncated pixels");
    v = (wide ? (b[0] << 8 | b[1]) : b[0]) / maxval;
  }
  return img;
}

Tensor synthetic_texture(std::size_t size, std::uint64_t seed) {
  if (size < 8) throw std::invalid_argument("texture size must be at least 8");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Tensor img(Shape{size, size}, 0.0);
  const double n = static_cast<double>(size);
  for (int g = 0; g < 6; ++g) {
    const double theta = std::numbers::pi * unif(rng);
    const double freq = 0.05 + 0.25 * unif(rng);
    const double phase = 2 * std::numbers::pi * unif(rng);
    const double amp = 0.5 + unif(rng);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) {
        const double t = std::cos(theta) * static_cast<double>(i) + std::sin(theta) * static_cast<double>(j);
        img(i, j) += amp * std::sin(2 * std::numbers::pi * freq * t + phase);
      }
  }
  for (int b = 0; b < 12; ++b) {
    const double ci = n * unif(rng), cj = n * unif(rng), r = 2 + 0.08 * n * unif(rng);
    const double amp = 3.0 * (unif(rng) - 0.5);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) {
        const double di = static_cast<double>(i) - ci, dj = static_cast<double>(j) - cj;
        img(i, j) += amp * std::exp(-(di * di + dj * dj) / (2 * r * r));
      }
  }
  for (int e = 0; e < 4; ++e) {
    const double theta = 2 * std::numbers::pi * unif(rng);
    const double off = n * unif(rng);
    const double amp = 1.5 * (unif(rng) - 0.5);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) {
        const double t = std::cos(theta) * static_cast<double>(i) + std::sin(theta) * static_cast<double>(j);
        if (t > off - n / 2) img(i, j) += amp;
      }
  }
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& v : img.data()) v += noise(rng);
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  const double a = *lo, span = *hi - *lo;
  for (auto& v : img.data()) v = span > 0 ? (v - a) / span : 0.0;
  return img;
}

Tensor extract_patches(const Tensor& image, std::size_t patch, std::size_t count, std::uint64_t seed) {
  if (image.rank() != 2) throw ShapeError("image must be a matrix, got " + shape_to_string(image.shape()));
  if (patch == 0 || patch > image.rows() || patch > image.cols()) {
    throw std::invalid_argument("patch size " + std::to_string(patch) + " does not fit image " +
                                shape_to_string(image.shape()));
  }
  if (count == 0) throw std::invalid_argument("patch count must be positive");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> ri(0, image.rows() - patch), rj(0, image.cols() - patch);
  Tensor out(Shape{patch * patch, count});
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t i0 = ri(rng), j0 = rj(rng);
    double mean = 0.0;
    for (std::size_t a = 0; a < patch; ++a)
      for (std::size_t b = 0; b < patch; ++b) mean += image(i0 + a, j0 + b);
    mean /= static_cast<double>(patch * patch);
    for (std::size_t a = 0; a < patch; ++a)
      for (std::size_t b = 0; b < patch; ++b) out(a * patch + b, c) = image(i0 + a, j0 + b) - mean;
  }
  return out;
}

LabeledData gaussian_mixture(std::size_t n, std::size_t dim, std::size_t classes, double separation, double noise,
                             std::uint64_t seed) {
  if (n == 0 || dim == 0 || classes < 2) throw std::invalid_argument("mixture needs n, dim > 0 and >= 2 classes");
  Rng rng(seed);
  const Tensor means = random_normal({classes, dim}, separation / std::sqrt(static_cast<double>(dim)), rng);
  std::normal_distribution<double> g(0.0, noise);
  LabeledData out;
  out.classes = classes;
  out.X = Tensor(Shape{n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    out.labels.push_back(c);
    for (std::size_t j = 0; j < dim; ++j) out.X(i, j) = means(c, j) + g(rng);
  }
  return out;
}

LabeledData nonnegative_mixture(std::size_t n, std::size_t dim, std::size_t classes, double separation, double noise,
                                std::uint64_t seed) {
  LabeledData out = gaussian_mixture(n, dim, classes, separation, noise, seed);
  for (auto& v : out.X.data()) v = std::abs(v);
  return out;
}

LabeledData clustered_classes(std::size_t n, std::size_t dim, std::size_t clusters, std::size_t classes,
                              double separation, double noise, std::uint64_t seed) {
  if (classes < 2 || clusters < classes) throw std::invalid_argument("need at least as many clusters as classes >= 2");
  LabeledData out = gaussian_mixture(n, dim, clusters, separation, noise, seed);
  for (auto& l : out.labels) l %= classes;
  out.classes = classes;
  return out;
}

Split split_indices(std::size_t n, double train_fraction, double dev_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && dev_fraction >= 0 && train_fraction + dev_fraction < 1)) {
    throw std::invalid_argument("split fractions must leave a nonempty test set");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto ntr = static_cast<std::size_t>(std::round(train_fraction * static_cast<double>(n)));
  const auto ndev = static_cast<std::size_t>(std::round(dev_fraction * static_cast<double>(n)));
  if (ntr == 0 || ntr + ndev >= n) throw std::invalid_argument("split leaves an empty part for n = " + std::to_string(n));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntr));
  s.dev.assign(idx.begin() + static_cast<std::ptrdiff_t>(ntr), idx.begin() + static_cast<std::ptrdiff_t>(ntr + ndev));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(ntr + ndev), idx.end());
  return s;
}

}  // namespace spred::data
