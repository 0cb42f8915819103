#include "fcraft/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fcraft/rng.hpp"

namespace fcraft::synthdata {

namespace {

struct Blob {
  double cx, cy, sigma, amp;
};

constexpr double kBackground = 0.2;
constexpr double kBrightnessRange = 0.15;

}  // namespace

Dataset generate_dataset(const DataConfig& cfg, std::uint64_t seed) {
  if (cfg.n_identities < 2)
    throw std::invalid_argument("generate_dataset: need at least 2 identities");
  if (cfg.side < 4 || cfg.blobs == 0 || cfg.images_per_identity == 0)
    throw std::invalid_argument("generate_dataset: degenerate dimensions");

  const std::size_t dims = cfg.side * cfg.side;
  const std::size_t n = cfg.n_identities * cfg.images_per_identity;
  Dataset d;
  d.images = Tensor({n, dims});
  d.ids.resize(n);
  d.attrs.resize(n);
  d.side = cfg.side;

  std::size_t at = 0;
  for (std::size_t id = 0; id < cfg.n_identities; ++id) {
    // Persistent identity signature, one stream per identity.
    Rng id_rng(derive_seed(seed, 1000 + id));
    std::vector<Blob> blobs(cfg.blobs);
    for (auto& b : blobs) {
      b.cx = id_rng.uniform(2.0, double(cfg.side) - 2.0);
      b.cy = id_rng.uniform(2.0, double(cfg.side) - 2.0);
      b.sigma = id_rng.uniform(1.2, 2.6);
      b.amp = id_rng.uniform(0.45, 0.85);
    }

    for (std::size_t img = 0; img < cfg.images_per_identity; ++img, ++at) {
      Rng nz(derive_seed(seed, 1000000 + id * 1000 + img));
      // Stratified brightness: even image indices land in the dark half,
      // odd in the bright half, so both attribute classes exist per identity.
      const double b = (img % 2 == 0) ? nz.uniform(-kBrightnessRange, 0.0)
                                      : nz.uniform(0.0, kBrightnessRange);
      const double dx = 0.5 * nz.normal();
      const double dy = 0.5 * nz.normal();

      for (std::size_t y = 0; y < cfg.side; ++y) {
        for (std::size_t x = 0; x < cfg.side; ++x) {
          double v = kBackground + b;
          for (const Blob& bl : blobs) {
            const double ex = double(x) - (bl.cx + dx);
            const double ey = double(y) - (bl.cy + dy);
            v += bl.amp * std::exp(-(ex * ex + ey * ey) /
                                   (2.0 * bl.sigma * bl.sigma));
          }
          d.images.at(at, y * cfg.side + x) = std::clamp(v, 0.0, 1.0);
        }
      }
      d.ids[at] = static_cast<int>(id);
      d.attrs[at] = b > 0.0 ? 1 : 0;
    }
  }
  return d;
}

namespace {

Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.images = take_rows(d.images, idx);
  out.side = d.side;
  out.ids.reserve(idx.size());
  out.attrs.reserve(idx.size());
  for (std::size_t i : idx) {
    out.ids.push_back(d.ids[i]);
    out.attrs.push_back(d.attrs[i]);
  }
  return out;
}

}  // namespace

DatasetSplit split_dataset(const Dataset& d, double pub_fraction,
                           double train_test_ratio, std::uint64_t seed) {
  if (train_test_ratio <= 0)
    throw std::invalid_argument("split_dataset: ratio must be positive");

  std::vector<int> identities(d.ids.begin(), d.ids.end());
  std::sort(identities.begin(), identities.end());
  identities.erase(std::unique(identities.begin(), identities.end()),
                   identities.end());
  const std::size_t n_ids = identities.size();
  const std::size_t n_pub = static_cast<std::size_t>(
      std::llround(pub_fraction * static_cast<double>(n_ids)));
  if (n_pub == 0 || n_pub >= n_ids)
    throw std::invalid_argument(
        "split_dataset: both sides need at least one identity");

  Rng rng(seed);
  rng.shuffle(identities);
  std::vector<bool> is_pub_id(*std::max_element(identities.begin(),
                                                identities.end()) + 1,
                              false);
  for (std::size_t i = 0; i < n_pub; ++i) is_pub_id[identities[i]] = true;

  std::vector<std::size_t> pub_idx, train_idx, test_idx;
  // Group private rows per identity, then cut each group train:test.
  for (int id : identities) {
    std::vector<std::size_t> rows_of_id;
    for (std::size_t i = 0; i < d.count(); ++i)
      if (d.ids[i] == id) rows_of_id.push_back(i);
    if (is_pub_id[id]) {
      pub_idx.insert(pub_idx.end(), rows_of_id.begin(), rows_of_id.end());
      continue;
    }
    if (rows_of_id.size() < 2)
      throw std::invalid_argument(
          "split_dataset: private identities need at least 2 images");
    rng.shuffle(rows_of_id);
    const double r = train_test_ratio;
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(double(rows_of_id.size()) * r / (r + 1.0)));
    n_train = std::clamp<std::size_t>(n_train, 1, rows_of_id.size() - 1);
    for (std::size_t i = 0; i < rows_of_id.size(); ++i)
      (i < n_train ? train_idx : test_idx).push_back(rows_of_id[i]);
  }
  std::sort(pub_idx.begin(), pub_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  DatasetSplit s;
  s.x_pub = subset(d, pub_idx);
  s.x_train = subset(d, train_idx);
  s.x_test = subset(d, test_idx);
  return s;
}

Tensor normalize_to_reference(const Tensor& images, const Tensor& reference) {
  if (images.size() == 0 || reference.size() == 0)
    throw std::invalid_argument("normalize_to_reference: empty input");
  auto moments = [](const Tensor& t) {
    double mean = 0;
    for (std::size_t i = 0; i < t.size(); ++i) mean += t[i];
    mean /= double(t.size());
    double var = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double c = t[i] - mean;
      var += c * c;
    }
    return std::pair<double, double>(mean, var / double(t.size()));
  };
  const auto [mi, vi] = moments(images);
  const auto [mr, vr] = moments(reference);
  if (vi <= 0)
    throw std::invalid_argument("normalize_to_reference: zero input variance");
  const double scale = std::sqrt(vr / vi);
  Tensor out(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i)
    out[i] = (images[i] - mi) * scale + mr;
  return out;
}

namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("dataset file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ofstream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::ifstream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("dataset file: truncated");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void dump_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  put_u32(os, static_cast<std::uint32_t>(d.count()));
  put_u32(os, static_cast<std::uint32_t>(d.dims()));
  for (std::size_t i = 0; i < d.images.size(); ++i) put_f64(os, d.images[i]);
  for (int id : d.ids) put_u32(os, static_cast<std::uint32_t>(id));
  for (int a : d.attrs) put_u32(os, static_cast<std::uint32_t>(a));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  const std::uint32_t count = get_u32(is);
  const std::uint32_t dims = get_u32(is);
  Dataset d;
  d.images = Tensor({count, dims});
  d.side = static_cast<std::size_t>(std::llround(std::sqrt(double(dims))));
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = get_f64(is);
  d.ids.resize(count);
  d.attrs.resize(count);
  for (auto& id : d.ids) id = static_cast<int>(get_u32(is));
  for (auto& a : d.attrs) a = static_cast<int>(get_u32(is));
  return d;
}

}  // namespace fcraft::synthdata
