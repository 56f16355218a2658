#include "vmm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <zlib.h>

#include "vmm/rng.hpp"

namespace vmm::data {

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string& s = ss.str();
  return std::vector<unsigned char>(s.begin(), s.end());
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in,
                                  const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK)
    throw std::runtime_error("zlib initialization failed");
  std::vector<unsigned char> out;
  std::vector<unsigned char> buf(1 << 16);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("corrupt gzip stream in '" + path + "'");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  std::vector<unsigned char> raw = read_file(path);
  if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) return gunzip(raw, path);
  return raw;
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off,
                        const std::string& path) {
  if (off + 4 > buf.size())
    throw std::runtime_error("'" + path + "' is truncated inside the header");
  return (static_cast<std::uint32_t>(buf[off]) << 24) |
         (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 8) |
         static_cast<std::uint32_t>(buf[off + 3]);
}

void append_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

bool parse_double(const std::string& field, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(field, &used);
  } catch (const std::exception&) {
    return false;
  }
  while (used < field.size() && (field[used] == ' ' || field[used] == '\t')) ++used;
  return used == field.size();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<unsigned char> img = read_maybe_gzip(images_path);
  const std::uint32_t magic = read_be32(img, 0, images_path);
  if (magic != kImageMagic)
    throw std::runtime_error("'" + images_path + "' has magic " + std::to_string(magic) +
                             ", expected " + std::to_string(kImageMagic));
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t D = rows * cols;
  if (img.size() < 16 + n * D)
    throw std::runtime_error("'" + images_path + "' is truncated: header promises " +
                             std::to_string(16 + n * D) + " bytes, file has " +
                             std::to_string(img.size()));

  Dataset ds;
  ds.x = Tensor({n, D});
  for (std::size_t i = 0; i < n * D; ++i)
    ds.x[i] = static_cast<double>(img[16 + i]) / 127.5 - 1.0;
  ds.scaling = "pixel/127.5-1";

  if (!labels_path.empty()) {
    const std::vector<unsigned char> lab = read_maybe_gzip(labels_path);
    const std::uint32_t lmagic = read_be32(lab, 0, labels_path);
    if (lmagic != kLabelMagic)
      throw std::runtime_error("'" + labels_path + "' has magic " + std::to_string(lmagic) +
                               ", expected " + std::to_string(kLabelMagic));
    const std::size_t ln = read_be32(lab, 4, labels_path);
    if (lab.size() < 8 + ln)
      throw std::runtime_error("'" + labels_path + "' is truncated: header promises " +
                               std::to_string(8 + ln) + " bytes, file has " +
                               std::to_string(lab.size()));
    if (ln != n)
      throw std::runtime_error("image count " + std::to_string(n) + " and label count " +
                               std::to_string(ln) + " differ");
    ds.labels.resize(ln);
    for (std::size_t i = 0; i < ln; ++i) ds.labels[i] = static_cast<int>(lab[8 + i]);
  }
  return ds;
}

void save_idx_images(const std::string& path, std::size_t rows, std::size_t cols,
                     const std::vector<unsigned char>& pixels) {
  const std::size_t D = rows * cols;
  if (D == 0 || pixels.size() % D != 0)
    throw std::invalid_argument("save_idx_images: pixel count is not a multiple of " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  append_be32(out, kImageMagic);
  append_be32(out, static_cast<std::uint32_t>(pixels.size() / D));
  append_be32(out, static_cast<std::uint32_t>(rows));
  append_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void save_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  append_be32(out, kLabelMagic);
  append_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Dataset load_csv(const std::string& path, bool final_column_labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const std::vector<std::string> fields = split_fields(line);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size() && numeric; ++i)
      numeric = parse_double(fields[i], row[i]);
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue; // header row
      std::size_t bad = 0;
      double tmp;
      while (parse_double(fields[bad], tmp)) ++bad;
      throw std::runtime_error("'" + path + "' line " + std::to_string(line_no) +
                               ": field " + std::to_string(bad + 1) + " is not numeric");
    }
    if (width == 0) {
      width = row.size();
      if (final_column_labels && width < 2)
        throw std::runtime_error("'" + path + "' needs at least one feature column");
    } else if (row.size() != width) {
      throw std::runtime_error("'" + path + "' line " + std::to_string(line_no) + ": has " +
                               std::to_string(row.size()) + " fields, expected " +
                               std::to_string(width));
    }
    if (final_column_labels) {
      const double lab = row.back();
      if (lab != std::floor(lab))
        throw std::runtime_error("'" + path + "' line " + std::to_string(line_no) +
                                 ": label " + std::to_string(lab) + " is not an integer");
      labels.push_back(static_cast<int>(lab));
      row.pop_back();
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("'" + path + "' holds no data rows");

  Dataset ds;
  const std::size_t D = rows[0].size();
  ds.x = Tensor({rows.size(), D});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < D; ++d) ds.x.at(i, d) = rows[i][d];
  ds.labels = std::move(labels);
  return ds;
}

void SynthSpec::validate() const {
  if (components < 1 || dim < 1 || points_per_component < 1)
    throw std::invalid_argument("SynthSpec: components, dim and points must be positive");
  if (means.size() != components || scales.size() != components)
    throw std::invalid_argument("SynthSpec: need one mean and one scale per component");
  for (const auto& m : means)
    if (m.size() != dim) throw std::invalid_argument("SynthSpec: mean dimension mismatch");
  for (double s : scales)
    if (!(s >= 0)) throw std::invalid_argument("SynthSpec: scales must be nonnegative");
  for (std::size_t a = 0; a < components; ++a)
    for (std::size_t b = a + 1; b < components; ++b)
      if (means[a] == means[b])
        throw std::invalid_argument("SynthSpec: means must be pairwise distinct");
}

Dataset synth_mixture(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t N = spec.components * spec.points_per_component;
  Dataset ds;
  ds.x = Tensor({N, spec.dim});
  ds.labels.resize(N);
  std::size_t i = 0;
  for (std::size_t j = 0; j < spec.components; ++j) {
    for (std::size_t t = 0; t < spec.points_per_component; ++t, ++i) {
      ds.labels[i] = static_cast<int>(j);
      for (std::size_t d = 0; d < spec.dim; ++d)
        ds.x.at(i, d) = spec.means[j][d] + spec.scales[j] * rng.gauss();
    }
  }
  return ds;
}

Dataset split(Dataset ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("split: validation fraction must lie in (0,1)");
  const std::size_t N = ds.x.rows();
  const std::size_t n_val =
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(N)));
  if (n_val == 0) throw std::invalid_argument("split: validation fold would be empty");
  if (n_val >= N) throw std::invalid_argument("split: training fold would be empty");

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = N - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(order[i], order[j]);
  }
  ds.val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(ds.val_idx.begin(), ds.val_idx.end());
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  return ds;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  Tensor out({idx.size(), x.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t d = 0; d < x.cols(); ++d) out.at(i, d) = x.at(idx[i], d);
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& idx) {
  if (labels.empty()) return {};
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels.at(idx[i]);
  return out;
}

void save_pgm(const std::string& path, std::size_t width, std::size_t height,
              const std::vector<unsigned char>& pixels) {
  if (pixels.size() != width * height)
    throw std::invalid_argument("save_pgm: pixel count does not match " +
                                std::to_string(width) + "x" + std::to_string(height));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace vmm::data
