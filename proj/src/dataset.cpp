// SPDX-License-Identifier: Apache-2.0
#include "thinner/dataset.hpp"

#include "thinner/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace thinner {

std::string split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val" || s == "valid" || s == "validation" || s == "dev") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

std::vector<TextExample> Dataset::subset(Split s) const {
    std::vector<TextExample> out;
    for (const auto& ex : examples) {
        if (ex.split == s) out.push_back(ex);
    }
    return out;
}

std::size_t Dataset::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [s](const TextExample& ex) { return ex.split == s; }));
}

void Dataset::validate() const {
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].label >= class_count()) {
            throw DataError("dataset: example " + std::to_string(i) + " has label " +
                            std::to_string(examples[i].label) + " outside [0, " +
                            std::to_string(class_count()) + ")");
        }
    }
}

InputFormat parse_format(std::string_view s) {
    if (s == "csv") return InputFormat::csv;
    if (s == "jsonl") return InputFormat::jsonl;
    throw ParameterError("unknown format '" + std::string(s) + "' (expected csv or jsonl)");
}

LabelMapping load_mapping(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open label mapping " + path.string());
    LabelMapping mapping;
    try {
        const auto j = nlohmann::json::parse(is);
        for (const auto& [name, id] : j.items()) mapping[name] = id.get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw MappingError("label mapping " + path.string() + ": " + e.what());
    }
    return mapping;
}

namespace {

struct RawRow {
    std::size_t line = 0;
    std::string text;
    std::string label;
    bool label_is_int = false;
    std::optional<std::string> split;
};

[[noreturn]] void row_error(std::size_t line, const std::string& what) {
    throw DataError("line " + std::to_string(line) + ": " + what);
}

bool parse_int_label(const std::string& s, std::size_t line, std::size_t& out) {
    if (s.empty()) return false;
    const bool negative = s[0] == '-';
    const std::string_view digits = negative ? std::string_view(s).substr(1) : std::string_view(s);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        return false;
    }
    if (negative) row_error(line, "negative label " + s);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), out);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) row_error(line, "label out of range: " + s);
    return true;
}

// RFC 4180 records; quoted fields may span lines. Returns (first line, fields).
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::string_view content) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
    std::size_t line = 1;
    std::size_t i = 0;
    while (i < content.size()) {
        const std::size_t start_line = line;
        std::vector<std::string> fields;
        std::string field;
        bool in_quotes = false;
        bool after_quote = false;
        bool done = false;
        while (!done) {
            if (i >= content.size()) {
                if (in_quotes) row_error(start_line, "unterminated quoted field");
                fields.push_back(std::move(field));
                break;
            }
            const char c = content[i++];
            if (in_quotes) {
                if (c == '"') {
                    if (i < content.size() && content[i] == '"') {
                        field.push_back('"');
                        ++i;
                    } else {
                        in_quotes = false;
                        after_quote = true;
                    }
                } else {
                    if (c == '\n') ++line;
                    field.push_back(c);
                }
                continue;
            }
            switch (c) {
            case '"':
                if (!field.empty() || after_quote) row_error(line, "stray quote inside unquoted field");
                in_quotes = true;
                break;
            case ',':
                fields.push_back(std::move(field));
                field.clear();
                after_quote = false;
                break;
            case '\r':
                break;
            case '\n':
                ++line;
                fields.push_back(std::move(field));
                done = true;
                break;
            default:
                if (after_quote) row_error(line, "characters after closing quote");
                field.push_back(c);
            }
        }
        const bool blank = fields.size() == 1 && fields[0].empty();
        if (!blank) records.emplace_back(start_line, std::move(fields));
    }
    return records;
}

std::vector<RawRow> read_csv(std::string_view content, const IngestOptions& opt) {
    auto records = parse_csv(content);
    if (records.empty()) throw DataError("line 1: missing header row");
    const auto& header = records.front().second;
    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto text_col = column(opt.text_field);
    const auto label_col = column(opt.label_field);
    const auto split_col = column(opt.split_field);
    if (!text_col) row_error(records.front().first, "header lacks a '" + opt.text_field + "' column");
    if (!label_col) row_error(records.front().first, "header lacks a '" + opt.label_field + "' column");

    std::vector<RawRow> rows;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& [line, fields] = records[r];
        if (fields.size() != header.size()) {
            row_error(line, "expected " + std::to_string(header.size()) + " fields, found " +
                                std::to_string(fields.size()));
        }
        RawRow row;
        row.line = line;
        row.text = fields[*text_col];
        row.label = fields[*label_col];
        if (row.label.empty()) row_error(line, "empty label");
        std::size_t ignored = 0;
        row.label_is_int = parse_int_label(row.label, line, ignored);
        if (split_col && !fields[*split_col].empty()) row.split = fields[*split_col];
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<RawRow> read_jsonl(std::string_view content, const IngestOptions& opt) {
    std::vector<RawRow> rows;
    std::size_t line = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        const std::size_t end = std::min(content.find('\n', pos), content.size());
        std::string_view text = content.substr(pos, end - pos);
        ++line;
        pos = end + 1;
        if (std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
            if (end == content.size()) break;
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            row_error(line, std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object()) row_error(line, "expected a JSON object");
        if (!j.contains(opt.text_field) || !j[opt.text_field].is_string()) {
            row_error(line, "missing string field '" + opt.text_field + "'");
        }
        if (!j.contains(opt.label_field)) row_error(line, "missing field '" + opt.label_field + "'");
        RawRow row;
        row.line = line;
        row.text = j[opt.text_field].get<std::string>();
        const auto& label = j[opt.label_field];
        if (label.is_number_integer()) {
            if (label.get<long long>() < 0) row_error(line, "negative label " + label.dump());
            row.label = std::to_string(label.get<long long>());
            row.label_is_int = true;
        } else if (label.is_string()) {
            row.label = label.get<std::string>();
            std::size_t ignored = 0;
            row.label_is_int = parse_int_label(row.label, line, ignored);
        } else {
            row_error(line, "label must be an integer or a string");
        }
        if (j.contains(opt.split_field)) {
            if (!j[opt.split_field].is_string()) row_error(line, "split must be a string");
            row.split = j[opt.split_field].get<std::string>();
        }
        rows.push_back(std::move(row));
        if (end == content.size()) break;
    }
    return rows;
}

Dataset assemble(std::vector<RawRow> rows, const IngestOptions& opt, std::string provenance) {
    Dataset data;
    data.provenance = std::move(provenance);
    std::map<std::string, std::size_t> ids;
    if (opt.mapping) {
        ids = *opt.mapping;
        std::size_t classes = 0;
        for (const auto& [_, id] : ids) classes = std::max(classes, id + 1);
        data.label_names.assign(classes, "");
        for (const auto& [name, id] : ids) data.label_names[id] = name;
        for (std::size_t c = 0; c < classes; ++c) {
            if (data.label_names[c].empty()) data.label_names[c] = std::to_string(c);
        }
    } else if (std::all_of(rows.begin(), rows.end(), [](const RawRow& r) { return r.label_is_int; })) {
        std::size_t classes = 0;
        for (const auto& r : rows) {
            std::size_t v = 0;
            parse_int_label(r.label, r.line, v);
            ids[r.label] = v;
            classes = std::max(classes, v + 1);
        }
        for (std::size_t c = 0; c < classes; ++c) data.label_names.push_back(std::to_string(c));
    } else {
        std::set<std::string> names;
        for (const auto& r : rows) names.insert(r.label);
        for (const auto& name : names) {
            ids[name] = data.label_names.size();
            data.label_names.push_back(name);
        }
    }

    bool any_split = false;
    for (auto& r : rows) {
        auto it = ids.find(r.label);
        if (it == ids.end()) {
            throw MappingError("line " + std::to_string(r.line) + ": label '" + r.label + "' not in mapping");
        }
        TextExample ex;
        ex.text = std::move(r.text);
        ex.label = it->second;
        if (r.split) {
            any_split = true;
            try {
                ex.split = parse_split(*r.split);
            } catch (const DataError& e) {
                row_error(r.line, e.what());
            }
        }
        data.examples.push_back(std::move(ex));
    }
    if (data.label_names.size() < 2 && !data.examples.empty()) {
        data.label_names.resize(2);
        if (data.label_names[1].empty()) data.label_names[1] = "1";
    }
    data.validate();
    if (!any_split || data.count(Split::val) == 0) split_train_val(data, opt.val_fraction, opt.seed);
    return data;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace

Dataset ingest_text(std::string_view content, InputFormat format, const IngestOptions& options) {
    auto rows = format == InputFormat::csv ? read_csv(content, options) : read_jsonl(content, options);
    return assemble(std::move(rows), options, format == InputFormat::csv ? "csv" : "jsonl");
}

Dataset ingest(const std::filesystem::path& path, InputFormat format, const IngestOptions& options) {
    const std::string content = read_file(path);
    try {
        Dataset d = ingest_text(content, format, options);
        d.provenance = path.string();
        return d;
    } catch (const MappingError& e) {
        throw MappingError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void split_train_val(Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw ParameterError("val fraction must lie in [0, 1)");
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        if (data.examples[i].split == Split::train) train.push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(train.begin(), train.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
    for (std::size_t k = 0; k < n_val; ++k) data.examples[train[k]].split = Split::val;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path, InputFormat format) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    if (format == InputFormat::csv) {
        os << "text,label,split\n";
        for (const auto& ex : data.examples) {
            os << csv_quote(ex.text) << ',' << ex.label << ',' << split_name(ex.split) << '\n';
        }
    } else {
        for (const auto& ex : data.examples) {
            os << nlohmann::json{{"text", ex.text}, {"label", ex.label}, {"split", split_name(ex.split)}}.dump()
               << '\n';
        }
    }
    if (!os) throw DataError("write failed for " + path.string());
}

// ---- vocabulary -----------------------------------------------------------

std::vector<std::string> segment(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            words.emplace_back(1, ch);
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return words;
}

Vocabulary::Vocabulary() : words_{"[pad]", "[unk]"} {
    ids_["[pad]"] = kPadId;
    ids_["[unk]"] = kUnkId;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) {
        if (v.ids_.count(w)) continue;
        v.ids_[w] = static_cast<TokenId>(v.words_.size());
        v.words_.push_back(w);
    }
    return v;
}

Vocabulary Vocabulary::build(const std::vector<TextExample>& examples, std::size_t max_size) {
    if (max_size < 2) throw ParameterError("vocabulary size must be at least 2");
    std::map<std::string, std::size_t> freq;
    for (const auto& ex : examples) {
        for (auto& w : segment(ex.text)) ++freq[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > max_size - 2) ranked.resize(max_size - 2);
    std::vector<std::string> words;
    for (auto& [w, _] : ranked) words.push_back(w);
    return from_words(words);
}

TokenId Vocabulary::id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnkId : it->second;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    std::vector<TokenId> ids;
    for (const auto& w : segment(text)) {
        if (ids.size() == max_len) break;
        ids.push_back(vocab.id(w));
    }
    return ids;
}

std::vector<Example> encode(const std::vector<TextExample>& examples, const Vocabulary& vocab,
                            std::size_t max_len) {
    std::vector<Example> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        Example e;
        e.ids = tokenize(ex.text, vocab, max_len);
        if (e.ids.empty()) e.ids.push_back(kUnkId);
        e.label = ex.label;
        out.push_back(std::move(e));
    }
    return out;
}

// ---- synthetic tasks ------------------------------------------------------

SynthKind parse_synth_kind(std::string_view s) {
    if (s == "keyword-flag") return SynthKind::keyword_flag;
    if (s == "majority-class") return SynthKind::majority_class;
    if (s == "positional-pair") return SynthKind::positional_pair;
    throw ParameterError("unknown synthetic task '" + std::string(s) +
                         "' (expected keyword-flag, majority-class or positional-pair)");
}

std::string synth_kind_name(SynthKind k) {
    switch (k) {
    case SynthKind::keyword_flag: return "keyword-flag";
    case SynthKind::majority_class: return "majority-class";
    case SynthKind::positional_pair: return "positional-pair";
    }
    return "keyword-flag";
}

namespace {

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

} // namespace

Dataset synth_task(const SynthOptions& opt) {
    if (opt.size == 0) throw ParameterError("synth: size must be positive");
    if (opt.distractors == 0) throw ParameterError("synth: distractors must be positive");
    if (!(opt.positive_fraction >= 0.0 && opt.positive_fraction <= 1.0)) {
        throw ParameterError("synth: positive_fraction must lie in [0, 1]");
    }
    const std::size_t min_len = opt.kind == SynthKind::positional_pair ? 2 * opt.window + 4 : 4;
    if (opt.seq_len < min_len) {
        throw ParameterError("synth: seq_len must be at least " + std::to_string(min_len) + " for " +
                             synth_kind_name(opt.kind));
    }
    if (opt.kind == SynthKind::positional_pair && opt.window == 0) throw ParameterError("synth: window must be positive");

    std::mt19937_64 rng(opt.seed);
    const double fraction = opt.kind == SynthKind::majority_class ? 0.5 : opt.positive_fraction;
    const auto positives = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(opt.size)));
    std::vector<std::size_t> labels(opt.size, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::uniform_int_distribution<std::size_t> length(std::max(min_len, opt.seq_len / 2), opt.seq_len);
    std::uniform_int_distribution<std::size_t> filler(0, opt.distractors - 1);
    auto filler_words = [&](std::size_t len) {
        std::vector<std::string> w(len);
        for (auto& s : w) s = "w" + std::to_string(filler(rng));
        return w;
    };
    auto pick_positions = [&](std::size_t len, std::size_t k) {
        std::vector<std::size_t> all(len);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(k);
        return all;
    };

    Dataset data;
    data.provenance = "synthetic " + synth_kind_name(opt.kind) + " seed=" + std::to_string(opt.seed);
    switch (opt.kind) {
    case SynthKind::keyword_flag: data.label_names = {"absent", "present"}; break;
    case SynthKind::majority_class: data.label_names = {"ma", "mb"}; break;
    case SynthKind::positional_pair: data.label_names = {"apart", "near"}; break;
    }

    for (std::size_t i = 0; i < opt.size; ++i) {
        const std::size_t len = length(rng);
        auto words = filler_words(len);
        const std::size_t label = labels[i];
        switch (opt.kind) {
        case SynthKind::keyword_flag: {
            if (label == 1) {
                const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
                for (std::size_t pos : pick_positions(len, k)) {
                    words[pos] = "kw" + std::to_string(std::uniform_int_distribution<int>(0, 3)(rng));
                }
            }
            break;
        }
        case SynthKind::majority_class: {
            // Odd marker total so one side always wins.
            const std::size_t max_total = std::min<std::size_t>(len, 9);
            const std::size_t total = std::uniform_int_distribution<std::size_t>(1, (max_total + 1) / 2)(rng) * 2 - 1;
            const std::size_t wins = std::uniform_int_distribution<std::size_t>(total / 2 + 1, total)(rng);
            const auto pos = pick_positions(len, total);
            for (std::size_t k = 0; k < total; ++k) {
                words[pos[k]] = ((k < wins) == (label == 1)) ? "mb" : "ma";
            }
            break;
        }
        case SynthKind::positional_pair: {
            std::size_t a = 0, b = 0;
            if (label == 1) {
                const std::size_t gap = std::uniform_int_distribution<std::size_t>(1, opt.window)(rng);
                a = std::uniform_int_distribution<std::size_t>(0, len - 1 - gap)(rng);
                b = a + gap;
            } else {
                const std::size_t gap = std::uniform_int_distribution<std::size_t>(opt.window + 1, len - 1)(rng);
                a = std::uniform_int_distribution<std::size_t>(0, len - 1 - gap)(rng);
                b = a + gap;
            }
            if (std::bernoulli_distribution(0.5)(rng)) std::swap(a, b);
            words[a] = "pa";
            words[b] = "pb";
            break;
        }
        }
        data.examples.push_back(TextExample{join(words), label, Split::train});
    }
    return data;
}

} // namespace thinner
