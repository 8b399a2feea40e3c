#pragma once

// Run configuration: flat key = value text with sectioned namespaces per
// module. Every key has a documented default; unknown keys are rejected;
// the fully resolved configuration is logged with each run and hashed per
// section to address pipeline artifacts.

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rehab/common.hpp"

namespace rehab {

class RunConfig {
public:
    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            {"seed", "0"},
            // dataset
            {"dataset.source", "files"},  // files | synth
            {"dataset.root", "."},
            {"dataset.schema", "schema.txt"},
            {"dataset.exercise", "01"},
            {"dataset.exercises", ""},  // comma list for table runs; empty = dataset.exercise
            // synthetic generator
            {"synth.d", "10"},
            {"synth.t", "64"},
            {"synth.subjects", "5"},
            {"synth.reps", "4"},
            {"synth.harmonics", "3"},
            {"synth.noise", "0.05"},
            {"synth.perturbation", "0.6"},
            {"synth.subject_sigma", "0.15"},
            {"synth.length_jitter", "0.2"},
            // dimensionality reduction
            {"dimred.kind", "ae"},  // raw | mv | pca | ae
            {"dimred.m", "0"},      // 0 = kind default (mv/pca 3, ae 4)
            {"dimred.ae.units", "30,10"},
            {"dimred.ae.epochs", "300"},
            {"dimred.ae.lr", "0.001"},
            {"dimred.ae.patience", "20"},
            {"dimred.ae.batch", "5"},
            // metrics
            {"metrics.kind", "gmm"},  // euclid | mahal | dtw | gmm
            {"metrics.mode", "between"},
            {"metrics.gmm.components", "6"},
            {"metrics.gmm.max_iters", "200"},
            {"metrics.gmm.tol", "1e-6"},
            {"metrics.gmm.max_dim", "10"},
            {"metrics.eps_cov", "1e-6"},
            // scoring
            {"scoring.alpha1", "3.2"},
            {"scoring.alpha2", "10"},
            // model
            {"model.arch", "spatio_temporal"},
            {"model.pyramid_steps", "1,2,4,8"},
            {"model.filters", "3,5,7"},
            {"model.part_channels", "16"},
            {"model.merge_channels", "32"},
            {"model.dropout", "0.25"},
            {"model.recurrent_units", "80,40,40,80"},
            {"model.fc_units", "80"},
            {"model.use_branches", "true"},
            {"model.use_pyramids", "true"},
            {"model.use_hierarchy", "true"},
            {"model.use_recurrent", "true"},
            // trainer
            {"trainer.batch_size", "5"},
            {"trainer.lr", "0.001"},
            {"trainer.max_epochs", "500"},
            {"trainer.patience", "30"},
            {"trainer.runs", "5"},
            {"trainer.ratio", "0.7"},
        };
        return d;
    }

    RunConfig() : values_(defaults()) {}

    static RunConfig from_text(const std::string& text, const std::string& origin = "<config>") {
        RunConfig cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        }
        return cfg;
    }

    static RunConfig from_file(const std::filesystem::path& path) {
        return from_text(read_text_file(path), path.string());
    }

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw ConfigError("unknown configuration key '" + key + "'");
        values_[key] = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
        return it->second;
    }

    long get_int(const std::string& key) const {
        long v = 0;
        if (!parse_long(get(key), v)) throw ConfigError(key + ": expected integer, got '" + get(key) + "'");
        return v;
    }

    double get_double(const std::string& key) const {
        double v = 0.0;
        if (!parse_double(get(key), v)) throw ConfigError(key + ": expected number, got '" + get(key) + "'");
        return v;
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(key + ": expected boolean, got '" + v + "'");
    }

    std::vector<int> get_ints(const std::string& key) const {
        std::vector<int> out;
        for (const auto& tok : split(get(key), ',')) {
            const std::string t = trim(tok);
            if (t.empty()) continue;
            long v = 0;
            if (!parse_long(t, v)) throw ConfigError(key + ": expected integer list, got '" + get(key) + "'");
            out.push_back(int(v));
        }
        return out;
    }

    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out;
        for (const auto& tok : split(get(key), ','))
            if (!trim(tok).empty()) out.push_back(trim(tok));
        return out;
    }

    std::uint64_t seed() const { return std::uint64_t(get_int("seed")); }

    // Sorted key = value lines; written next to artifacts for every run.
    std::string resolved_text() const {
        std::ostringstream out;
        for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
        return out.str();
    }

    // Canonical text of the sections a stage depends on; its hash addresses
    // the stage's artifacts.
    std::string section_text(const std::vector<std::string>& prefixes) const {
        std::ostringstream out;
        for (const auto& [k, v] : values_)
            for (const auto& p : prefixes)
                if (k == p || k.rfind(p + ".", 0) == 0) {
                    out << k << " = " << v << '\n';
                    break;
                }
        return out.str();
    }

    std::string stage_hash(const std::vector<std::string>& prefixes) const {
        return hash_hex(fnv1a64(section_text(prefixes)));
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace rehab
