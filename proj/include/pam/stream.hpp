#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pam/model.hpp"

namespace pam {

enum class Generator { gauss_split, rot_moons, perm_features };

std::string to_string(Generator g);
Generator parse_generator(const std::string& s);

struct StreamSpec {
    Generator generator = Generator::gauss_split;
    int num_tasks = 5;
    int classes_per_task = 2;
    int samples_per_class = 200;       // training samples per class
    int test_samples_per_class = 200;  // test samples per class
    std::size_t input_dim = 16;
    double noise_scale = 0.6;
    double radius = 3.0;               // gauss_split: radius of the circle of class means
    double rotation_step_deg = -1.0;   // rot_moons: default 180/T
    std::uint64_t master_seed = 0;

    void validate() const;
    // Total distinct class ids across the stream.
    int total_classes() const;
    double rotation_step_radians() const;
};

struct TaskDataset {
    int task_id = 0;  // 1-based
    Batch train;
    Batch test;
    std::vector<int> classes;
    std::uint64_t seed = 0;

    bool operator==(const TaskDataset&) const = default;
};

std::vector<TaskDataset> generate(const StreamSpec& spec);
// Random access: equal to generate(spec)[task_id − 1].
TaskDataset generate_task(const StreamSpec& spec, int task_id);

// Unrotated rot_moons samples shared by every task of the stream.
struct MoonsBase {
    Batch train;
    Batch test;
};
MoonsBase moons_base(const StreamSpec& spec);

// Held-out generic mixture used to pretrain the frozen base.
Batch generic_mixture(std::size_t input_dim, int num_classes, int samples_per_class, double noise_scale,
                      double radius, std::uint64_t seed);

// `d` feature columns followed by a `label` column, header row included.
void write_batch_csv(const Batch& batch, const std::filesystem::path& path);
Batch read_batch_csv(const std::filesystem::path& path);

}  // namespace pam
