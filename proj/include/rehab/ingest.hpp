#pragma once

// Ingestion of plain-text skeleton recordings. A schema descriptor (flat
// key = value file) names the folder layout, the filename pattern with
// {exercise}/{subject}/{rep} placeholders, the dimension count, optional
// exclusions, and the body-part index map. One file is one repetition; an
// optional segment index file maps row ranges of long recordings to
// repetitions instead.

#include <filesystem>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "rehab/common.hpp"
#include "rehab/dataset.hpp"

namespace rehab {

namespace fs = std::filesystem;

struct DatasetSchema {
    int dimensions = 117;
    int canonical_T = 240;
    std::string delimiter = "auto";  // auto | comma | whitespace
    std::string correct_dir;
    std::string incorrect_dir;
    std::string file_pattern = "m{exercise}_s{subject}_e{rep}_angles.txt";
    std::string segments_file;            // optional alternative layout
    std::vector<std::string> exclude;     // file stems to drop
    BodyPartMap body_parts;
    bool has_body_parts = false;
};

namespace detail {

// "3-9,12,15-17" -> zero-based indices {2..8, 11, 14..16}; schema ranges are
// 1-based inclusive.
inline std::vector<int> parse_index_ranges(const std::string& text, const std::string& key) {
    std::vector<int> out;
    for (const std::string& piece : split(text, ',')) {
        const std::string p = trim(piece);
        if (p.empty()) continue;
        long lo = 0, hi = 0;
        const auto dash = p.find('-');
        if (dash == std::string::npos) {
            if (!parse_long(p, lo)) throw SchemaError(key + ": bad index '" + p + "'");
            hi = lo;
        } else {
            if (!parse_long(p.substr(0, dash), lo) || !parse_long(p.substr(dash + 1), hi))
                throw SchemaError(key + ": bad range '" + p + "'");
        }
        if (lo < 1 || hi < lo) throw SchemaError(key + ": invalid range '" + p + "'");
        for (long i = lo; i <= hi; ++i) out.push_back(int(i - 1));
    }
    return out;
}

inline std::string regex_escape(const std::string& s) {
    static const std::string special = R"(\.^$|()[]{}*+?/)";
    std::string out;
    for (char c : s) {
        if (special.find(c) != std::string::npos) out += '\\';
        out += c;
    }
    return out;
}

inline int subject_to_int(const std::string& token) {
    std::string digits;
    for (char c : token)
        if (c >= '0' && c <= '9') digits += c;
    long v = 0;
    if (digits.empty() || !parse_long(digits, v))
        throw SchemaError("subject token '" + token + "' carries no numeric id");
    return int(v);
}

}  // namespace detail

inline DatasetSchema parse_schema(const fs::path& path) {
    DatasetSchema s;
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open schema file: " + path.string());
    std::string line;
    int lineno = 0;
    bool any_part = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        long n = 0;
        if (key == "schema.dimensions") {
            if (!parse_long(val, n) || n <= 0) throw SchemaError("schema.dimensions: bad value '" + val + "'");
            s.dimensions = int(n);
        } else if (key == "schema.canonical_t") {
            if (!parse_long(val, n) || n < 2) throw SchemaError("schema.canonical_t: bad value '" + val + "'");
            s.canonical_T = int(n);
        } else if (key == "schema.delimiter") {
            if (val != "auto" && val != "comma" && val != "whitespace")
                throw SchemaError("schema.delimiter: expected auto|comma|whitespace");
            s.delimiter = val;
        } else if (key == "schema.correct_dir") {
            s.correct_dir = val;
        } else if (key == "schema.incorrect_dir") {
            s.incorrect_dir = val;
        } else if (key == "schema.file_pattern") {
            s.file_pattern = val;
        } else if (key == "schema.segments") {
            s.segments_file = val;
        } else if (key == "schema.exclude") {
            for (const auto& e : split(val, ','))
                if (!trim(e).empty()) s.exclude.push_back(trim(e));
        } else if (key.rfind("bodypart.", 0) == 0) {
            const std::string part = key.substr(9);
            bool matched = false;
            for (int g = 0; g < BodyPartMap::kParts; ++g) {
                if (part == BodyPartMap::names[std::size_t(g)]) {
                    s.body_parts.groups[std::size_t(g)] = detail::parse_index_ranges(val, key);
                    matched = true;
                }
            }
            if (!matched) throw SchemaError("unknown body part key: " + key);
            any_part = true;
        } else {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    s.has_body_parts = any_part;
    return s;
}

// ---------------------------------------------------------------------------
// Matrix file IO. Parse errors name file, row, and column. Writing uses
// round-trip exact decimal formatting, so parse(write(m)) == m.
// ---------------------------------------------------------------------------
inline Mat parse_matrix_file(const fs::path& path, const std::string& delimiter = "auto") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string work = line;
        if (delimiter != "whitespace")
            for (char& c : work)
                if (c == ',') c = ' ';
        std::istringstream ss(work);
        std::vector<double> row;
        std::string cell;
        while (ss >> cell) {
            double v = 0.0;
            if (!parse_double(cell, v))
                throw ParseError(path.string() + ": row " + std::to_string(lineno) + ", column " +
                                 std::to_string(row.size() + 1) + ": malformed numeric cell '" + cell + "'");
            row.push_back(v);
        }
        if (row.empty()) continue;  // blank line
        if (width == 0) width = row.size();
        if (row.size() != width)
            throw ParseError(path.string() + ": row " + std::to_string(lineno) + ": expected " +
                             std::to_string(width) + " columns, found " + std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("empty data file: " + path.string());
    Mat m(int(rows.size()), int(width));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < width; ++c) m(int(r), int(c)) = rows[r][c];
    return m;
}

inline void write_matrix_file(const fs::path& path, const Mat& m) {
    std::ostringstream out;
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (c) out << ' ';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// ingest: load every repetition of one exercise under the schema layout.
// ---------------------------------------------------------------------------
namespace detail {

struct MatchedFile {
    fs::path path;
    int subject;
    std::string rep_token;
};

inline std::vector<MatchedFile> match_files(const fs::path& dir, const std::string& pattern,
                                            const std::string& exercise_token) {
    // placeholders: {exercise} fixed token, {subject} and {rep} captured
    std::string rx;
    int subject_group = 0, rep_group = 0, group = 0;
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern[i] == '{') {
            const auto close = pattern.find('}', i);
            if (close == std::string::npos) throw SchemaError("file_pattern: unbalanced '{'");
            const std::string name = pattern.substr(i + 1, close - i - 1);
            if (name == "exercise") {
                rx += regex_escape(exercise_token);
            } else if (name == "subject") {
                rx += "([A-Za-z0-9]+)";
                subject_group = ++group;
            } else if (name == "rep") {
                rx += "([A-Za-z0-9]+)";
                rep_group = ++group;
            } else {
                throw SchemaError("file_pattern: unknown placeholder {" + name + "}");
            }
            i = close + 1;
        } else {
            rx += regex_escape(std::string(1, pattern[i]));
            ++i;
        }
    }
    if (!subject_group) throw SchemaError("file_pattern: missing {subject} placeholder");
    const std::regex re(rx);

    std::vector<MatchedFile> out;
    if (!fs::exists(dir)) throw DataError("data directory does not exist: " + dir.string());
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
        std::smatch m;
        const std::string name = p.filename().string();
        if (!std::regex_match(name, m, re)) continue;
        MatchedFile f;
        f.path = p;
        f.subject = subject_to_int(m[std::size_t(subject_group)].str());
        f.rep_token = rep_group ? m[std::size_t(rep_group)].str() : "";
        out.push_back(std::move(f));
    }
    return out;
}

inline bool excluded(const DatasetSchema& schema, const fs::path& file) {
    const std::string stem = file.stem().string();
    for (const auto& e : schema.exclude)
        if (stem.find(e) != std::string::npos) return true;
    return false;
}

inline Repetition make_repetition(Mat raw, const DatasetSchema& schema, const fs::path& file,
                                  int subject, Correctness label, const std::string& exercise_id) {
    if (raw.cols != schema.dimensions)
        throw SchemaError(file.string() + ": expected " + std::to_string(schema.dimensions) +
                          " dimensions, found " + std::to_string(raw.cols));
    Repetition rep;
    rep.source_length = raw.rows;
    rep.values = resample_matrix(raw, schema.canonical_T);
    rep.subject_id = subject;
    rep.exercise_id = exercise_id;
    rep.correctness = label;
    rep.source_file = file.string();
    return rep;
}

inline void ingest_segments(const fs::path& root, const DatasetSchema& schema,
                            const std::string& exercise_token, ExerciseDataset& ds) {
    // index file lines: <relative file> <subject> <rep> <correct|incorrect> <start> <end>
    // rows [start, end) are zero-based
    const fs::path index = root / schema.segments_file;
    std::ifstream in(index);
    if (!in) throw DataError("cannot open segment index: " + index.string());
    std::map<std::string, Mat> cache;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::string file, rep_token, label;
        long subject = 0, start = 0, end = 0;
        if (!(ss >> file >> subject >> rep_token >> label >> start >> end))
            throw ParseError(index.string() + ":" + std::to_string(lineno) + ": malformed segment record");
        if (label != "correct" && label != "incorrect")
            throw SchemaError(index.string() + ":" + std::to_string(lineno) + ": label must be correct|incorrect");
        if (!cache.count(file)) cache[file] = parse_matrix_file(root / file, schema.delimiter);
        const Mat& whole = cache[file];
        if (start < 0 || end <= start || end > whole.rows)
            throw SchemaError(index.string() + ":" + std::to_string(lineno) + ": segment range out of bounds");
        Mat seg(int(end - start), whole.cols);
        for (int r = 0; r < seg.rows; ++r)
            for (int c = 0; c < seg.cols; ++c) seg(r, c) = whole(int(start) + r, c);
        auto rep = make_repetition(std::move(seg), schema, root / file, int(subject),
                                   label == "correct" ? Correctness::correct : Correctness::incorrect,
                                   exercise_token);
        rep.source_file += ":" + std::to_string(start) + "-" + std::to_string(end);
        (rep.correctness == Correctness::correct ? ds.reference : ds.patient).push_back(std::move(rep));
    }
}

}  // namespace detail

inline ExerciseDataset ingest(const fs::path& root, const DatasetSchema& schema,
                              const std::string& exercise_token) {
    if (schema.canonical_T % 8 != 0)
        throw ConfigError("canonical_T must be divisible by 8, got " + std::to_string(schema.canonical_T));
    ExerciseDataset ds;
    ds.exercise_id = exercise_token;
    ds.canonical_T = schema.canonical_T;
    ds.dims = schema.dimensions;
    ds.body_parts = schema.has_body_parts ? schema.body_parts : BodyPartMap::contiguous(schema.dimensions);
    ds.body_parts.validate(schema.dimensions);

    if (!schema.segments_file.empty()) {
        detail::ingest_segments(root, schema, exercise_token, ds);
    } else {
        auto load_side = [&](const std::string& dir, Correctness label, std::vector<Repetition>& dst) {
            if (dir.empty()) return;
            for (const auto& f : detail::match_files(root / dir, schema.file_pattern, exercise_token)) {
                if (detail::excluded(schema, f.path)) continue;
                Mat raw = parse_matrix_file(f.path, schema.delimiter);
                dst.push_back(detail::make_repetition(std::move(raw), schema, f.path, f.subject, label,
                                                      exercise_token));
            }
        };
        load_side(schema.correct_dir, Correctness::correct, ds.reference);
        load_side(schema.incorrect_dir, Correctness::incorrect, ds.patient);
    }

    if (ds.reference.empty())
        throw DataError("exercise " + exercise_token + ": no reference (correct) repetitions found");
    return ds;
}

// Normalized dataset manifest: one record per repetition.
inline std::string manifest_csv(const ExerciseDataset& ds) {
    std::ostringstream out;
    out << "file,subject,label,t_source\n";
    auto emit = [&](const std::vector<Repetition>& reps) {
        for (const auto& r : reps)
            out << r.source_file << ',' << r.subject_id << ',' << to_string(r.correctness) << ','
                << r.source_length << '\n';
    };
    emit(ds.reference);
    emit(ds.patient);
    return out.str();
}

// Writes a dataset to disk in the schema layout (one text matrix per
// repetition plus a schema file), so synthetic data flows through the same
// ingestion path as recorded data.
inline void export_dataset(const ExerciseDataset& ds, const fs::path& root) {
    const std::string correct_dir = "correct";
    const std::string incorrect_dir = "incorrect";
    fs::create_directories(root / correct_dir);
    fs::create_directories(root / incorrect_dir);
    std::map<std::pair<int, int>, int> rep_counter;  // (subject, class) -> next index
    auto emit = [&](const std::vector<Repetition>& reps, const std::string& dir, int klass) {
        for (const auto& r : reps) {
            const int idx = ++rep_counter[{r.subject_id, klass}];
            char name[128];
            std::snprintf(name, sizeof name, "m%s_s%02d_e%02d_angles.txt", ds.exercise_id.c_str(),
                          r.subject_id, idx);
            write_matrix_file(root / dir / name, r.values);
        }
    };
    emit(ds.reference, correct_dir, 0);
    emit(ds.patient, incorrect_dir, 1);

    std::ostringstream schema;
    schema << "# generated dataset schema\n"
           << "schema.dimensions = " << ds.dims << "\n"
           << "schema.canonical_t = " << ds.canonical_T << "\n"
           << "schema.delimiter = whitespace\n"
           << "schema.correct_dir = " << correct_dir << "\n"
           << "schema.incorrect_dir = " << incorrect_dir << "\n"
           << "schema.file_pattern = m{exercise}_s{subject}_e{rep}_angles.txt\n";
    for (int g = 0; g < BodyPartMap::kParts; ++g) {
        const auto& grp = ds.body_parts.groups[std::size_t(g)];
        if (grp.empty()) continue;
        schema << "bodypart." << BodyPartMap::names[std::size_t(g)] << " = ";
        for (std::size_t i = 0; i < grp.size(); ++i) {
            if (i) schema << ",";
            schema << grp[i] + 1;
        }
        schema << "\n";
    }
    write_text_file(root / "schema.txt", schema.str());
}

}  // namespace rehab
