#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bidc/rng.hpp"

namespace bidc {

/// Token inventory. Ids 0 and 1 are reserved for PAD and UNK; generated
/// sentences never contain either.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    /// PAD, UNK plus `n_symbols` single-character tokens drawn from a CJK
    /// codepoint pool keyed by the grammar seed, so TSV files look like
    /// character-granularity text and different grammars hash differently.
    static Vocab synthetic(std::size_t n_symbols, std::uint64_t grammar_seed = 0);
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return tokens.size(); }
    int id_or_unk(const std::string& token) const;
    const std::string& token(int id) const;
    std::uint64_t fnv1a_hash() const;
    std::string hash_hex() const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);
};

/// Per-token confusable substitutes with positive weights; no token maps to
/// itself and PAD/UNK never appear on either side.
struct ConfusionTable {
    std::vector<std::vector<std::pair<int, double>>> entries;  // indexed by token id

    static ConfusionTable build(const Vocab& vocab, std::uint64_t grammar_seed,
                                std::size_t min_confusables, std::size_t max_confusables);
    bool has_confusables(int id) const {
        return id >= 0 && static_cast<std::size_t>(id) < entries.size() && !entries[id].empty();
    }
};

/// First-order Markov chain over content tokens. Sentences start from the
/// stationary distribution, so every position is marginally stationary.
class MarkovChain {
public:
    /// `damping` is the probability mass routed through the learned successor
    /// table; the rest is uniform smoothing that keeps the chain ergodic.
    static MarkovChain build(const Vocab& vocab, std::uint64_t grammar_seed,
                             std::size_t branching, double damping = 0.98);

    std::vector<int> sample_sentence(Rng& rng, std::size_t length) const;
    const std::vector<double>& stationary() const { return stationary_; }
    /// Row of the transition matrix for a content token (full vocab indexing).
    std::vector<double> transition_row(int id) const;

private:
    int first_content_id_ = 2;
    std::size_t n_content_ = 0;
    double damping_ = 0.98;
    std::vector<std::vector<std::pair<int, double>>> successors_;  // normalized weights
    std::vector<double> stationary_;  // over content tokens, index 0 == first_content_id_

    int sample_from(Rng& rng, int previous) const;
    int sample_stationary(Rng& rng) const;
};

struct Sample {
    std::vector<int> source;
    std::vector<int> target;
    std::vector<int> det_labels;
};

std::vector<int> derive_labels(const std::vector<int>& source, const std::vector<int>& target);

/// Independent per-position substitution with probability `p`; tokens without
/// confusables are skipped.
Sample corrupt(const std::vector<int>& sentence, double error_rate, const ConfusionTable& table,
               Rng& rng);

struct CorpusSpec {
    std::size_t vocab_size = 200;      // content symbols, excluding PAD/UNK
    std::size_t min_len = 8;
    std::size_t max_len = 20;
    double error_rate = 0.15;
    std::uint64_t grammar_seed = 7;
    std::uint64_t seed = 1234;
    std::size_t train = 10000;
    std::size_t dev = 1000;
    std::size_t test = 1000;
    std::size_t branching = 2;
    double damping = 0.98;
    std::size_t confusables_min = 2;
    std::size_t confusables_max = 5;

    void validate() const;
};

std::vector<std::vector<int>> generate_clean(const MarkovChain& chain, std::size_t count,
                                             std::size_t min_len, std::size_t max_len,
                                             std::uint64_t rng_seed,
                                             std::uint64_t stream_offset = 0);

/// Clean generation + corruption, with per-sentence RNG derived from
/// (seed, stream_offset + index) so results are independent of ordering.
std::vector<Sample> generate_corpus(const MarkovChain& chain, const ConfusionTable& table,
                                    const CorpusSpec& spec, std::size_t count,
                                    std::uint64_t stream_offset);

struct TsvLoadResult {
    std::vector<Sample> samples;
    std::size_t unknown_tokens = 0;
};

TsvLoadResult load_tsv(const std::string& path, const Vocab& vocab);
void save_tsv(const std::string& path, const std::vector<Sample>& samples, const Vocab& vocab);

std::string manifest_json(const CorpusSpec& spec, const Vocab& vocab);

// UTF-8 helpers (single-codepoint token handling for TSV files).
std::vector<std::string> utf8_split(const std::string& text);

}  // namespace bidc
