// SPDX-License-Identifier: Apache-2.0
//
// Text datasets, a word-level frequency vocabulary, and seeded synthetic
// classification tasks.
#pragma once

#include "thinner/model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace thinner {

enum class Split { train, val, test };
std::string split_name(Split s);
Split parse_split(std::string_view s);

struct TextExample {
    std::string text;
    std::size_t label = 0;
    Split split = Split::train;
};

struct Dataset {
    std::vector<TextExample> examples;
    std::vector<std::string> label_names;  // index = label id
    std::string provenance;

    std::size_t class_count() const noexcept { return label_names.size(); }
    std::vector<TextExample> subset(Split s) const;
    std::size_t count(Split s) const;
    /// Throws DataError if any label is outside [0, class_count).
    void validate() const;
};

enum class InputFormat { csv, jsonl };
InputFormat parse_format(std::string_view s);

/// String label -> id. Loaded from a JSON object {"name": id, ...}.
using LabelMapping = std::map<std::string, std::size_t>;
LabelMapping load_mapping(const std::filesystem::path& path);

struct IngestOptions {
    std::string text_field = "text";
    std::string label_field = "label";
    std::string split_field = "split";
    std::optional<LabelMapping> mapping;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
};

/// CSV needs a header row naming the text and label columns (RFC 4180
/// quoting). JSONL needs one object per line. Integer labels are used as
/// ids; string labels go through `mapping` (or, without one, sorted label
/// order). Rows without a split column are train rows, of which
/// `val_fraction` are moved to val by a seeded shuffle.
Dataset ingest(const std::filesystem::path& path, InputFormat format, const IngestOptions& options = {});
Dataset ingest_text(std::string_view content, InputFormat format, const IngestOptions& options = {});

/// Moves round(fraction * |train|) train rows to val, chosen by a seeded shuffle.
void split_train_val(Dataset& data, double fraction, std::uint64_t seed);

void write_dataset(const Dataset& data, const std::filesystem::path& path, InputFormat format);

// ---- vocabulary -----------------------------------------------------------

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;

/// Lowercases, splits on whitespace, and emits each ASCII punctuation
/// character as its own word.
std::vector<std::string> segment(std::string_view text);

class Vocabulary {
public:
    Vocabulary();
    /// Top `max_size - 2` words by frequency (ties broken alphabetically),
    /// after the pad and unknown entries.
    static Vocabulary build(const std::vector<TextExample>& examples, std::size_t max_size);
    static Vocabulary from_words(const std::vector<std::string>& words);

    TokenId id(const std::string& word) const;
    const std::vector<std::string>& words() const noexcept { return words_; }
    std::size_t size() const noexcept { return words_.size(); }

private:
    std::vector<std::string> words_;
    std::map<std::string, TokenId> ids_;
};

/// Ids of the segmented text, unknown words mapped to kUnkId, truncated to `max_len`.
std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

std::vector<Example> encode(const std::vector<TextExample>& examples, const Vocabulary& vocab,
                            std::size_t max_len);

// ---- synthetic tasks ------------------------------------------------------

enum class SynthKind { keyword_flag, majority_class, positional_pair };
SynthKind parse_synth_kind(std::string_view s);
std::string synth_kind_name(SynthKind k);

struct SynthOptions {
    SynthKind kind = SynthKind::keyword_flag;
    std::size_t size = 1000;
    std::size_t seq_len = 64;
    std::uint64_t seed = 0;
    std::size_t distractors = 500;   // distinct filler words w0..w{k-1}
    double positive_fraction = 0.5;  // keyword-flag and positional-pair only
    std::size_t window = 3;          // positional-pair co-occurrence window
};

/// Generators (all examples have lengths uniform in [seq_len/2, seq_len]):
///   keyword-flag     label 1 iff one to three trigger words ("kw0".."kw3")
///                    appear among uniform filler words.
///   majority-class   markers "ma" and "mb" are scattered; the label is the
///                    marker that occurs more often (never a tie).
///   positional-pair  "pa" and "pb" occur once each; label 1 iff their
///                    distance is at most `window`.
/// Label counts differ by at most one for the default positive fraction.
/// All examples carry split `train`.
Dataset synth_task(const SynthOptions& options);

} // namespace thinner
