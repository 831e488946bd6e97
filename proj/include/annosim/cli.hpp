#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "annosim/metrics.hpp"
#include "annosim/train.hpp"

namespace annosim {

/// Flat key=value config file; '#' starts a comment. CLI flags overwrite
/// entries via set().
struct KeyValueConfig {
    std::map<std::string, std::string> values;

    static KeyValueConfig from_file(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    std::vector<size_t> get_dims(const std::string& key, std::vector<size_t> fallback) const;

    nlohmann::json to_json() const;
};

/// A simulate run loaded back from disk: per-item annotations keyed by id.
struct AnnotationFile {
    TaskType task_type = TaskType::ordinal;
    size_t m_star = 0;
    double temperature = 1.0;
    std::map<std::string, std::vector<int>> ratings;                        // ordinal
    std::map<std::string, std::vector<std::vector<double>>> distributions;  // categorical
};

AnnotationFile load_annotations(const std::string& path);

void cmd_gen_synth(const KeyValueConfig& cfg, const std::string& out_dir);
void cmd_train(const std::string& corpus_dir, const std::string& model_kind,
               const KeyValueConfig& cfg, const std::string& out_dir);
void cmd_simulate(const std::string& checkpoint_path, const std::string& corpus_path,
                  size_t m_star, double temperature, uint64_t seed, const std::string& out_path);
/// Either annotations_path or checkpoint_path may be empty, but ordinal
/// corpora always need the checkpoint (the NLL is a model quantity).
MetricsReport cmd_evaluate(const std::string& corpus_path, const std::string& annotations_path,
                           const std::string& checkpoint_path, size_t m_star, double temperature,
                           uint64_t seed, const std::string& out_dir);
void cmd_temp_sweep(const std::string& checkpoint_path, const std::string& corpus_path,
                    const std::vector<double>& temperatures, size_t m_star, uint64_t seed,
                    const std::string& out_dir);
int cmd_selftest(uint64_t seed, std::ostream& out);

int run_cli(int argc, char** argv);

/// git-style content hash (sha1 over "blob <len>\0<content>").
std::string git_blob_sha1(const std::string& content);

}  // namespace annosim
