#pragma once

// Spatio-temporal assessment network. Each body part's dimension slice is
// processed as a temporal pyramid (full, half, quarter, eighth scale); every
// scale passes a two-layer multi-branch convolutional block whose stride
// brings all scales to the same temporal length, and the scale outputs are
// concatenated. Part streams merge hierarchically (arms -> upper body,
// legs -> lower body, + trunk -> whole body, each merge followed by a block)
// before an LSTM stack and a single linear output unit. Ablation flags
// disable branching, pyramids, hierarchy, or the recurrent stack; two plain
// baselines (deep CNN, deep LSTM) share the same interface.

#include <cstring>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/dataset.hpp"
#include "rehab/nn.hpp"

namespace rehab {

struct ModelConfig {
    std::string arch = "spatio_temporal";  // spatio_temporal | deep_cnn | deep_lstm
    int input_dim = 117;
    int canonical_T = 240;
    BodyPartMap body_parts;
    std::vector<int> pyramid_steps = {1, 2, 4, 8};  // subsample factors
    std::vector<int> branch_filter_lengths = {3, 5, 7};
    int part_channels = 16;   // per branch in part blocks
    int merge_channels = 32;  // per branch in merge blocks
    double dropout_rate = 0.25;
    std::vector<int> recurrent_units = {80, 40, 40, 80};
    int fc_units = 80;  // head width when the recurrent stack is ablated
    bool use_branches = true;
    bool use_pyramids = true;
    bool use_hierarchy = true;
    bool use_recurrent = true;
    std::uint64_t seed = 0;

    int max_step() const {
        int m = 1;
        for (int s : pyramid_steps) m = std::max(m, s);
        return m;
    }

    void validate() const {
        if (arch != "spatio_temporal" && arch != "deep_cnn" && arch != "deep_lstm")
            throw ConfigError("model: unknown arch '" + arch + "'");
        if (input_dim < 1) throw ConfigError("model: input_dim must be positive");
        if (canonical_T < 8 || canonical_T % 8 != 0)
            throw ConfigError("model: canonical_T must be a positive multiple of 8");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("model: dropout rate must be in [0, 1)");
        if (arch != "spatio_temporal") return;
        if (pyramid_steps.empty()) throw ConfigError("model: pyramid_steps empty");
        const int m = max_step();
        for (int s : pyramid_steps)
            if (s < 1 || m % s != 0)
                throw ConfigError("model: every pyramid step must divide the largest step");
        if (canonical_T % m != 0)
            throw ConfigError("model: canonical_T must be divisible by the largest pyramid step");
        if (branch_filter_lengths.empty()) throw ConfigError("model: no branch filter lengths");
        if (use_recurrent && recurrent_units.empty())
            throw ConfigError("model: recurrent_units empty with use_recurrent");
        if (use_hierarchy) body_parts.validate(input_dim);
    }
};

enum class BaselineKind { deep_cnn, deep_lstm };

class AssessModel {
public:
    ModelConfig config;
    nn::Graph graph;

    // structure introspection
    int part_streams = 0;
    int scales_per_stream = 0;
    int merged_length = 0;

    static AssessModel build(const ModelConfig& cfg);
    static AssessModel build_baseline(BaselineKind kind, int input_dim, int canonical_T,
                                      std::uint64_t seed = 0);

    std::size_t parameter_count() { return graph.param_count(); }

    // evaluation-mode scores (dropout off)
    double score_one(const Mat& rep) {
        if (rep.rows != config.canonical_T || rep.cols != config.input_dim)
            throw ShapeError("forward: repetition is " + std::to_string(rep.rows) + "x" +
                             std::to_string(rep.cols) + ", model expects " +
                             std::to_string(config.canonical_T) + "x" + std::to_string(config.input_dim));
        graph.training = false;
        return graph.forward(rep)(0, 0);
    }

    std::vector<double> score_batch(const std::vector<Mat>& batch) {
        std::vector<double> out;
        out.reserve(batch.size());
        for (const auto& rep : batch) out.push_back(score_one(rep));
        return out;
    }

    void save(const std::filesystem::path& path);
    static AssessModel load(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

namespace detail {

struct Stream {
    int node = -1;
    int channels = 0;
};

// Two convolutional layers, stride on the first so the block output length
// is t_in / stride; dropout follows each layer. Without branching the single
// middle-length filter keeps the full feature width, so the parameter count
// matches the branched layer.
inline Stream conv_block(nn::Graph& g, int src, int in_ch, int stride, int branch_ch,
                         const ModelConfig& cfg, const std::string& label, Rng& init) {
    std::vector<int> taps;
    int ch;
    if (cfg.use_branches) {
        taps = cfg.branch_filter_lengths;
        ch = branch_ch;
    } else {
        taps = {cfg.branch_filter_lengths[cfg.branch_filter_lengths.size() / 2]};
        ch = branch_ch * int(cfg.branch_filter_lengths.size());
    }
    const int width = int(taps.size()) * ch;
    int node = g.add(std::make_unique<nn::Conv1D>(src, in_ch, taps, ch, stride, nn::Act::relu,
                                                  label + ".conv1", init));
    node = g.add(std::make_unique<nn::Dropout>(node, cfg.dropout_rate));
    node = g.add(std::make_unique<nn::Conv1D>(node, width, taps, ch, 1, nn::Act::relu,
                                              label + ".conv2", init));
    node = g.add(std::make_unique<nn::Dropout>(node, cfg.dropout_rate));
    return {node, width};
}

// Temporal pyramid over one input stream: subsample to each scale, run a
// conv block whose stride restores a common length of t / max_step, and
// concatenate the scale outputs along the feature axis.
inline Stream pyramid_subnet(nn::Graph& g, int src, int src_ch, const ModelConfig& cfg,
                             const std::string& label, Rng& init, int* scale_count) {
    const int max_step = cfg.max_step();
    std::vector<int> steps = cfg.use_pyramids ? cfg.pyramid_steps : std::vector<int>{1};
    std::vector<int> nodes;
    int ch_each = 0;
    for (int step : steps) {
        int node = step == 1 ? src : g.add(std::make_unique<nn::Subsample>(src, step));
        const Stream s = conv_block(g, node, src_ch, max_step / step, cfg.part_channels, cfg,
                                    label + ".scale" + std::to_string(step), init);
        nodes.push_back(s.node);
        ch_each = s.channels;
    }
    if (scale_count) *scale_count = int(steps.size());
    if (nodes.size() == 1) return {nodes[0], ch_each};
    return {g.add(std::make_unique<nn::Concat>(nodes)), ch_each * int(nodes.size())};
}

inline Stream merge_streams(nn::Graph& g, const std::vector<Stream>& streams, const ModelConfig& cfg,
                            const std::string& label, Rng& init) {
    if (streams.empty()) return {};
    int node;
    int in_ch = 0;
    if (streams.size() == 1) {
        node = streams[0].node;
        in_ch = streams[0].channels;
    } else {
        std::vector<int> ids;
        for (const auto& s : streams) {
            ids.push_back(s.node);
            in_ch += s.channels;
        }
        node = g.add(std::make_unique<nn::Concat>(ids));
    }
    return conv_block(g, node, in_ch, 1, cfg.merge_channels, cfg, label, init);
}

}  // namespace detail

inline AssessModel AssessModel::build(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.arch == "deep_cnn")
        return build_baseline(BaselineKind::deep_cnn, cfg.input_dim, cfg.canonical_T, cfg.seed);
    if (cfg.arch == "deep_lstm")
        return build_baseline(BaselineKind::deep_lstm, cfg.input_dim, cfg.canonical_T, cfg.seed);

    AssessModel model;
    model.config = cfg;
    nn::Graph& g = model.graph;
    g.rng = Rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
    Rng init(cfg.seed);

    const int input = g.add(std::make_unique<nn::Input>());
    g.input_id = input;

    detail::Stream merged;
    if (cfg.use_hierarchy) {
        std::vector<detail::Stream> arms, legs, trunk;
        for (int p = 0; p < BodyPartMap::kParts; ++p) {
            const auto& group = cfg.body_parts.groups[std::size_t(p)];
            if (group.empty()) continue;
            const std::string part = BodyPartMap::names[std::size_t(p)];
            const int slice = g.add(std::make_unique<nn::SliceCols>(input, group));
            const auto stream = detail::pyramid_subnet(g, slice, int(group.size()), cfg, part, init,
                                                       &model.scales_per_stream);
            ++model.part_streams;
            if (p <= 1)
                arms.push_back(stream);
            else if (p <= 3)
                legs.push_back(stream);
            else
                trunk.push_back(stream);
        }
        if (model.part_streams == 0) throw ConfigError("model: body part map selects no dimensions");
        std::vector<detail::Stream> whole;
        if (!arms.empty()) whole.push_back(detail::merge_streams(g, arms, cfg, "upper", init));
        if (!legs.empty()) whole.push_back(detail::merge_streams(g, legs, cfg, "lower", init));
        for (const auto& t : trunk) whole.push_back(t);
        merged = detail::merge_streams(g, whole, cfg, "whole", init);
    } else {
        const auto stream =
            detail::pyramid_subnet(g, input, cfg.input_dim, cfg, "body", init, &model.scales_per_stream);
        model.part_streams = 1;
        merged = detail::merge_streams(g, {stream}, cfg, "whole", init);
    }
    model.merged_length = cfg.canonical_T / cfg.max_step();

    int prev = merged.node;
    int prev_ch = merged.channels;
    if (cfg.use_recurrent) {
        for (std::size_t i = 0; i < cfg.recurrent_units.size(); ++i) {
            const bool last = i + 1 == cfg.recurrent_units.size();
            prev = g.add(std::make_unique<nn::Lstm>(prev, prev_ch, cfg.recurrent_units[i], !last,
                                                    "lstm" + std::to_string(i), init));
            prev_ch = cfg.recurrent_units[i];
        }
    } else {
        prev = g.add(std::make_unique<nn::MeanPoolTime>(prev));
        prev = g.add(std::make_unique<nn::Dense>(prev, prev_ch, cfg.fc_units, nn::Act::relu, "fc", init));
        prev_ch = cfg.fc_units;
    }
    g.output_id = g.add(std::make_unique<nn::Dense>(prev, prev_ch, 1, nn::Act::linear, "output", init));
    return model;
}

inline AssessModel AssessModel::build_baseline(BaselineKind kind, int input_dim, int canonical_T,
                                               std::uint64_t seed) {
    AssessModel model;
    model.config.arch = kind == BaselineKind::deep_cnn ? "deep_cnn" : "deep_lstm";
    model.config.input_dim = input_dim;
    model.config.canonical_T = canonical_T;
    model.config.seed = seed;
    model.config.validate();

    nn::Graph& g = model.graph;
    g.rng = Rng(seed ^ 0xd1b54a32d192ed03ull);
    Rng init(seed);
    const int input = g.add(std::make_unique<nn::Input>());
    g.input_id = input;

    if (kind == BaselineKind::deep_cnn) {
        // three convolutional layers (60, 30, 10 units), two fully-connected
        // layers (200, 100), linear scalar output
        int prev = input, ch = input_dim;
        const int widths[3] = {60, 30, 10};
        for (int i = 0; i < 3; ++i) {
            prev = g.add(std::make_unique<nn::Conv1D>(prev, ch, std::vector<int>{5}, widths[i], 1,
                                                      nn::Act::relu, "conv" + std::to_string(i), init));
            ch = widths[i];
        }
        prev = g.add(std::make_unique<nn::Flatten>(prev));
        prev = g.add(std::make_unique<nn::Dense>(prev, canonical_T * ch, 200, nn::Act::relu, "fc0", init));
        prev = g.add(std::make_unique<nn::Dense>(prev, 200, 100, nn::Act::relu, "fc1", init));
        g.output_id = g.add(std::make_unique<nn::Dense>(prev, 100, 1, nn::Act::linear, "output", init));
    } else {
        // LSTM(20) -> time-distributed dense(30) -> LSTM(10) -> linear output
        int prev = g.add(std::make_unique<nn::Lstm>(input, input_dim, 20, true, "lstm0", init));
        prev = g.add(std::make_unique<nn::Dense>(prev, 20, 30, nn::Act::relu, "fc0", init));
        prev = g.add(std::make_unique<nn::Lstm>(prev, 30, 10, false, "lstm1", init));
        g.output_id = g.add(std::make_unique<nn::Dense>(prev, 10, 1, nn::Act::linear, "output", init));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Model config text form (used in checkpoints and the resolved-config log).
// ---------------------------------------------------------------------------

inline std::string model_config_text(const ModelConfig& cfg) {
    std::ostringstream out;
    auto ints = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    out << "arch = " << cfg.arch << '\n'
        << "input_dim = " << cfg.input_dim << '\n'
        << "canonical_t = " << cfg.canonical_T << '\n'
        << "pyramid_steps = " << ints(cfg.pyramid_steps) << '\n'
        << "branch_filters = " << ints(cfg.branch_filter_lengths) << '\n'
        << "part_channels = " << cfg.part_channels << '\n'
        << "merge_channels = " << cfg.merge_channels << '\n'
        << "dropout = " << format_double(cfg.dropout_rate) << '\n'
        << "recurrent_units = " << ints(cfg.recurrent_units) << '\n'
        << "fc_units = " << cfg.fc_units << '\n'
        << "use_branches = " << (cfg.use_branches ? 1 : 0) << '\n'
        << "use_pyramids = " << (cfg.use_pyramids ? 1 : 0) << '\n'
        << "use_hierarchy = " << (cfg.use_hierarchy ? 1 : 0) << '\n'
        << "use_recurrent = " << (cfg.use_recurrent ? 1 : 0) << '\n'
        << "seed = " << cfg.seed << '\n';
    for (int p = 0; p < BodyPartMap::kParts; ++p) {
        const auto& grp = cfg.body_parts.groups[std::size_t(p)];
        if (grp.empty()) continue;
        out << "bodypart." << BodyPartMap::names[std::size_t(p)] << " = " << ints(grp) << '\n';
    }
    return out.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
    ModelConfig cfg;
    cfg.body_parts = BodyPartMap{};
    std::istringstream in(text);
    std::string line;
    auto ints = [](const std::string& s) {
        std::vector<int> v;
        for (const auto& tok : split(s, ','))
            if (!trim(tok).empty()) v.push_back(std::stoi(trim(tok)));
        return v;
    };
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("model config: expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key == "arch") cfg.arch = val;
        else if (key == "input_dim") cfg.input_dim = std::stoi(val);
        else if (key == "canonical_t") cfg.canonical_T = std::stoi(val);
        else if (key == "pyramid_steps") cfg.pyramid_steps = ints(val);
        else if (key == "branch_filters") cfg.branch_filter_lengths = ints(val);
        else if (key == "part_channels") cfg.part_channels = std::stoi(val);
        else if (key == "merge_channels") cfg.merge_channels = std::stoi(val);
        else if (key == "dropout") cfg.dropout_rate = std::stod(val);
        else if (key == "recurrent_units") cfg.recurrent_units = ints(val);
        else if (key == "fc_units") cfg.fc_units = std::stoi(val);
        else if (key == "use_branches") cfg.use_branches = val == "1";
        else if (key == "use_pyramids") cfg.use_pyramids = val == "1";
        else if (key == "use_hierarchy") cfg.use_hierarchy = val == "1";
        else if (key == "use_recurrent") cfg.use_recurrent = val == "1";
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key.rfind("bodypart.", 0) == 0) {
            const std::string part = key.substr(9);
            bool matched = false;
            for (int p = 0; p < BodyPartMap::kParts; ++p)
                if (part == BodyPartMap::names[std::size_t(p)]) {
                    cfg.body_parts.groups[std::size_t(p)] = ints(val);
                    matched = true;
                }
            if (!matched) throw ParseError("model config: unknown body part '" + part + "'");
        } else {
            throw ParseError("model config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned header, config text, raw parameter payload.
// Loading rebuilds the graph from the config and restores weights, so
// forward outputs reproduce bit-for-bit on the same platform.
// ---------------------------------------------------------------------------

inline void AssessModel::save(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    const std::string magic = "RHABNET1\n";
    out.write(magic.data(), std::streamsize(magic.size()));
    const std::string cfg = model_config_text(config);
    const std::uint64_t cfg_len = cfg.size();
    out.write(reinterpret_cast<const char*>(&cfg_len), sizeof cfg_len);
    out.write(cfg.data(), std::streamsize(cfg.size()));
    const auto params = graph.params();
    const std::uint64_t n = params.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    for (nn::Param* p : params) {
        const std::uint32_t name_len = std::uint32_t(p->name.size());
        out.write(reinterpret_cast<const char*>(&name_len), sizeof name_len);
        out.write(p->name.data(), name_len);
        const std::uint32_t rows = std::uint32_t(p->value.rows), cols = std::uint32_t(p->value.cols);
        out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
        out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
        out.write(reinterpret_cast<const char*>(p->value.a.data()),
                  std::streamsize(p->value.a.size() * sizeof(double)));
    }
}

inline AssessModel AssessModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path.string());
    std::string magic(9, '\0');
    in.read(magic.data(), 9);
    if (magic != "RHABNET1\n") throw ParseError(path.string() + ": not a model checkpoint");
    std::uint64_t cfg_len = 0;
    in.read(reinterpret_cast<char*>(&cfg_len), sizeof cfg_len);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), std::streamsize(cfg_len));
    AssessModel model = build(parse_model_config(cfg_text));
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    const auto params = model.graph.params();
    if (n != params.size()) throw ParseError(path.string() + ": parameter count mismatch");
    for (nn::Param* p : params) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&rows), sizeof rows);
        in.read(reinterpret_cast<char*>(&cols), sizeof cols);
        if (name != p->name || int(rows) != p->value.rows || int(cols) != p->value.cols)
            throw ParseError(path.string() + ": parameter layout mismatch at " + name);
        in.read(reinterpret_cast<char*>(p->value.a.data()),
                std::streamsize(p->value.a.size() * sizeof(double)));
    }
    if (!in) throw ParseError(path.string() + ": truncated checkpoint");
    return model;
}

}  // namespace rehab
