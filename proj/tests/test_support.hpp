#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "rehab/common.hpp"
#include "rehab/dataset.hpp"

namespace testsup {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("rehab_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

// Small in-memory dataset with per-subject structure, handy wherever ingest
// is not itself under test.
inline rehab::ExerciseDataset tiny_dataset(int dims, int t, int subjects, int reps, double perturbation,
                                           std::uint64_t seed, double noise = 0.05) {
    rehab::SynthConfig cfg;
    cfg.dims = dims;
    cfg.canonical_T = t;
    cfg.subjects = subjects;
    cfg.reps_per_subject = reps;
    cfg.perturbation = perturbation;
    cfg.noise = noise;
    return rehab::synthesize(cfg, seed);
}

}  // namespace testsup
