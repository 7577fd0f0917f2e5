#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stars/tensor.hpp"

namespace stars {

/// Immutable labelled split. Inputs are [N x D]; labels in [0, num_classes).
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    std::string split;  // "train" or "test"
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.cols(); }
};

struct DataSplits {
    Dataset train;
    Dataset test;
};

/// Procedural classification data: class means on scaled axis/hypercube
/// corners with inter-mean distance >= 4 * spread, isotropic gaussian noise
/// of std `spread`, deterministic 80/20 split per seed.
DataSplits gaussian_blobs(std::size_t num_classes, std::size_t dim, std::size_t n_per_class,
                          double spread, std::uint64_t seed);

/// Per-dimension affine transform fitted on a train split.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;  // eps-guarded, never below 1e-12

    Tensor apply(const Tensor& inputs) const;
};

/// Fits on train, applies to both splits. Test always uses train statistics.
Standardizer standardize(DataSplits& splits);

/// Big-endian IDX ingestion (images magic 0x00000803, labels 0x00000801).
/// Pixels are scaled to [0,1] and images flattened to row vectors.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Same parser over in-memory buffers (the file variant is a thin wrapper).
Dataset load_idx_buffers(const std::vector<unsigned char>& images,
                         const std::vector<unsigned char>& labels);

/// Optional cache dump / reload, mirroring the checkpoint float format.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace stars
