#include "stars/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "stars/errors.hpp"
#include "stars/rng.hpp"

namespace stars {

namespace {

// Class means: for C <= D, scaled axis corners alpha * e_k give exactly equal
// pairwise distances alpha * sqrt(2); otherwise binary-code hypercube corners.
// Separation is 5 * spread, above the required 4 * spread.
std::vector<std::vector<double>> class_means(std::size_t num_classes, std::size_t dim,
                                             double spread) {
    const double separation = 5.0 * (spread > 0.0 ? spread : 1.0);
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
    if (num_classes <= dim) {
        const double alpha = separation / std::sqrt(2.0);
        for (std::size_t k = 0; k < num_classes; ++k) means[k][k] = alpha;
    } else {
        // distinct binary codes differ in >= 1 coordinate: distance >= 2*alpha
        const double alpha = separation / 2.0;
        for (std::size_t k = 0; k < num_classes; ++k)
            for (std::size_t j = 0; j < dim; ++j)
                means[k][j] = ((k >> (j % 63)) & 1u) ? alpha : -alpha;
    }
    return means;
}

}  // namespace

DataSplits gaussian_blobs(std::size_t num_classes, std::size_t dim, std::size_t n_per_class,
                          double spread, std::uint64_t seed) {
    if (num_classes < 2) throw ContractError("gaussian_blobs: need at least 2 classes");
    if (dim < 2) throw ContractError("gaussian_blobs: need dim >= 2");
    const auto means = class_means(num_classes, dim, spread);
    Rng rng = Rng(seed).derive("gaussian-blobs");

    const std::size_t n_test = n_per_class / 5;  // 80/20, disjoint by construction
    const std::size_t n_train = n_per_class - n_test;

    std::vector<double> train_x, test_x;
    std::vector<int> train_y, test_y;
    train_x.reserve(num_classes * n_train * dim);
    test_x.reserve(num_classes * n_test * dim);
    for (std::size_t k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const bool is_test = i >= n_train;
            auto& xs = is_test ? test_x : train_x;
            auto& ys = is_test ? test_y : train_y;
            for (std::size_t j = 0; j < dim; ++j)
                xs.push_back(means[k][j] + spread * rng.normal());
            ys.push_back(static_cast<int>(k));
        }
    }

    DataSplits out;
    out.train = Dataset{Tensor({train_y.size(), dim}, std::move(train_x)), std::move(train_y),
                        "train", num_classes};
    out.test = Dataset{Tensor({test_y.size(), dim}, std::move(test_x)), std::move(test_y),
                       "test", num_classes};
    return out;
}

Tensor Standardizer::apply(const Tensor& inputs) const {
    const std::size_t n = inputs.rows(), d = inputs.cols();
    if (d != mean.size()) throw ShapeError("standardizer: dimension mismatch");
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = (inputs.at(i, j) - mean[j]) / std[j];
    return Tensor({n, d}, std::move(out));
}

Standardizer standardize(DataSplits& splits) {
    const Tensor& x = splits.train.inputs;
    const std::size_t n = x.rows(), d = x.cols();
    Standardizer tf;
    tf.mean.assign(d, 0.0);
    tf.std.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) tf.mean[j] += x.at(i, j);
    for (auto& m : tf.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x.at(i, j) - tf.mean[j];
            tf.std[j] += c * c;
        }
    for (auto& s : tf.std) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-12);
    splits.train.inputs = tf.apply(splits.train.inputs);
    splits.test.inputs = tf.apply(splits.test.inputs);
    return tf;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const char* what) {
    if (offset + 4 > buf.size())
        throw ConfigError(std::string("idx: truncated ") + what + " at offset " +
                          std::to_string(offset));
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("idx: cannot open " + path.string());
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

Dataset load_idx_buffers(const std::vector<unsigned char>& images,
                         const std::vector<unsigned char>& labels) {
    const std::uint32_t img_magic = read_be32(images, 0, "image magic");
    if (img_magic != kImagesMagic)
        throw ConfigError("idx: bad image magic at offset 0 (expected 0x00000803)");
    const std::uint32_t n = read_be32(images, 4, "image count");
    const std::uint32_t rows = read_be32(images, 8, "image rows");
    const std::uint32_t cols = read_be32(images, 12, "image cols");
    const std::size_t expected = 16 + std::size_t(n) * rows * cols;
    if (images.size() < expected)
        throw ConfigError("idx: truncated image payload at offset " +
                          std::to_string(images.size()));
    if (images.size() > expected)
        throw ConfigError("idx: trailing bytes after image payload at offset " +
                          std::to_string(expected));
    if (rows == 0 || cols == 0 || n == 0)
        throw ConfigError("idx: zero extent in image header at offset 4");

    const std::uint32_t lbl_magic = read_be32(labels, 0, "label magic");
    if (lbl_magic != kLabelsMagic)
        throw ConfigError("idx: bad label magic at offset 0 (expected 0x00000801)");
    const std::uint32_t n_labels = read_be32(labels, 4, "label count");
    if (labels.size() != 8 + std::size_t(n_labels))
        throw ConfigError("idx: label payload size mismatch at offset 8");
    if (n_labels != n)
        throw ConfigError("idx: image/label count mismatch (" + std::to_string(n) + " vs " +
                          std::to_string(n_labels) + ") at offset 4");

    const std::size_t d = std::size_t(rows) * cols;
    std::vector<double> x(std::size_t(n) * d);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = static_cast<double>(images[16 + i]) / 255.0;
    std::vector<int> y(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(labels[8 + i]);
        max_label = std::max(max_label, y[i]);
    }
    return Dataset{Tensor({std::size_t(n), d}, std::move(x)), std::move(y), "train",
                   static_cast<std::size_t>(max_label) + 1};
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
    return load_idx_buffers(slurp(images_path), slurp(labels_path));
}

// ---------------------------------------------------------------------------
// cache dump

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["split"] = ds.split;
    j["num_classes"] = ds.num_classes;
    j["dim"] = ds.dim();
    j["inputs"] = ds.inputs.values();
    j["labels"] = ds.labels;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("dataset cache: cannot open for writing: " + path.string());
    f << j.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("dataset cache: file not found: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset cache: malformed file: " + std::string(e.what()));
    }
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
        throw ConfigError("dataset cache: unsupported schema_version");
    std::vector<double> x = j.at("inputs").get<std::vector<double>>();
    std::vector<int> y = j.at("labels").get<std::vector<int>>();
    const std::size_t d = j.at("dim").get<std::size_t>();
    Dataset ds{Tensor({y.size(), d}, std::move(x)), std::move(y),
               j.at("split").get<std::string>(), j.at("num_classes").get<std::size_t>()};
    return ds;
}

}  // namespace stars
