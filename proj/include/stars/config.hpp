#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stars/distill.hpp"
#include "stars/nets.hpp"
#include "stars/snn.hpp"
#include "stars/synthesis.hpp"

namespace stars {

struct DatasetConfig {
    std::size_t num_classes = 4;
    std::size_t dim = 16;
    std::size_t n_per_class = 625;
    double spread = 0.5;
    std::uint64_t seed = 1234;
    bool operator==(const DatasetConfig&) const = default;
};

struct TeacherConfig {
    std::vector<std::size_t> hidden{64, 64};
    std::size_t epochs = 80;
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::uint64_t seed = 7;
    std::string checkpoint = "teacher.json";
    bool operator==(const TeacherConfig&) const = default;
};

/// Full experiment description. Parsed from a single JSON document whose
/// schema is fixed: unknown keys are rejected with their key path, missing
/// sections fall back to the defaults above.
struct ExperimentConfig {
    DatasetConfig dataset;
    TeacherConfig teacher;
    LIFConfig lif;
    SynthesisConfig synthesis;
    DistillConfig distill;
    Variant variant = Variant::stars;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out_dir = "out";

    void validate() const;
    std::string to_json_string() const;
    static ExperimentConfig from_json_string(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);

    bool operator==(const ExperimentConfig&) const;
};

}  // namespace stars
