#include "bidc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bidc/errors.hpp"

namespace bidc {

namespace {

std::string codepoint_to_utf8(std::uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

}  // namespace

std::vector<std::string> utf8_split(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char head = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if ((head & 0x80) == 0x00) len = 1;
        else if ((head & 0xE0) == 0xC0) len = 2;
        else if ((head & 0xF0) == 0xE0) len = 3;
        else if ((head & 0xF8) == 0xF0) len = 4;
        else throw DataError("invalid UTF-8 byte at offset " + std::to_string(i));
        if (i + len > text.size()) throw DataError("truncated UTF-8 sequence");
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

Vocab Vocab::synthetic(std::size_t n_symbols, std::uint64_t grammar_seed) {
    if (n_symbols == 0) throw ConfigError("synthetic vocab needs at least one symbol");
    constexpr std::size_t kPool = 4096;  // U+4E00 onward, all valid CJK ideographs
    if (n_symbols > kPool) {
        throw ConfigError("synthetic vocab supports at most " + std::to_string(kPool) +
                          " symbols");
    }
    std::vector<std::uint32_t> pool(kPool);
    for (std::size_t i = 0; i < kPool; ++i) pool[i] = 0x4E00u + static_cast<std::uint32_t>(i);
    Rng rng(mix_seed(grammar_seed, 0x70cab));
    rng.shuffle(pool);
    pool.resize(n_symbols);
    std::sort(pool.begin(), pool.end());

    std::vector<std::string> tokens;
    tokens.reserve(n_symbols + 2);
    tokens.push_back("<pad>");
    tokens.push_back("<unk>");
    for (std::uint32_t cp : pool) tokens.push_back(codepoint_to_utf8(cp));
    return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    v.tokens = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
        if (!v.index.emplace(v.tokens[i], static_cast<int>(i)).second) {
            throw DataError("duplicate token '" + v.tokens[i] + "' in vocabulary");
        }
    }
    if (v.tokens.size() < 2 || v.tokens[0] != "<pad>" || v.tokens[1] != "<unk>") {
        throw DataError("vocabulary must start with <pad>, <unk>");
    }
    return v;
}

int Vocab::id_or_unk(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(tokens.size()));
    }
    return tokens[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::fnv1a_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens) {
        for (char c : t) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= '\n';
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string Vocab::hash_hex() const {
    std::ostringstream os;
    os << std::hex << fnv1a_hash();
    return os.str();
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& t : tokens) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return from_tokens(std::move(tokens));
}

ConfusionTable ConfusionTable::build(const Vocab& vocab, std::uint64_t grammar_seed,
                                     std::size_t min_confusables, std::size_t max_confusables) {
    if (min_confusables == 0 || max_confusables < min_confusables) {
        throw ConfigError("confusable count range is empty");
    }
    const std::size_t v = vocab.size();
    if (v <= 3) throw ConfigError("vocabulary too small for confusion sets");
    ConfusionTable table;
    table.entries.resize(v);
    Rng rng(mix_seed(grammar_seed, 0xc0fu));
    for (std::size_t id = 2; id < v; ++id) {
        const std::size_t count = static_cast<std::size_t>(
            rng.uniform_int(static_cast<long>(min_confusables), static_cast<long>(max_confusables)));
        std::vector<int> picked;
        while (picked.size() < count) {
            const int cand = 2 + static_cast<int>(rng.below(v - 2));
            if (cand == static_cast<int>(id)) continue;
            if (std::find(picked.begin(), picked.end(), cand) != picked.end()) continue;
            picked.push_back(cand);
        }
        auto& row = table.entries[id];
        for (std::size_t rank = 0; rank < picked.size(); ++rank) {
            row.emplace_back(picked[rank], 1.0 / static_cast<double>(rank + 1));
        }
    }
    return table;
}

MarkovChain MarkovChain::build(const Vocab& vocab, std::uint64_t grammar_seed,
                               std::size_t branching, double damping) {
    if (vocab.size() <= 3) throw ConfigError("vocabulary too small for a markov chain");
    if (!(damping >= 0.0 && damping < 1.0)) {
        throw ConfigError("chain damping must lie in [0,1)");
    }
    MarkovChain chain;
    chain.damping_ = damping;
    chain.n_content_ = vocab.size() - 2;
    if (branching == 0 || branching > chain.n_content_ - 1) {
        throw ConfigError("branching must lie in [1, content vocabulary - 1]");
    }
    Rng rng(mix_seed(grammar_seed, 0x3a1cULL));
    chain.successors_.resize(vocab.size());
    for (std::size_t id = 2; id < vocab.size(); ++id) {
        std::vector<int> picked;
        while (picked.size() < branching) {
            const int cand = 2 + static_cast<int>(rng.below(chain.n_content_));
            if (std::find(picked.begin(), picked.end(), cand) != picked.end()) continue;
            picked.push_back(cand);
        }
        auto& row = chain.successors_[id];
        double total = 0.0;
        for (std::size_t rank = 0; rank < picked.size(); ++rank) {
            const double w = 1.0 / static_cast<double>(rank + 1);
            row.emplace_back(picked[rank], w);
            total += w;
        }
        for (auto& e : row) e.second /= total;
    }

    // Stationary distribution by power iteration over the damped chain.
    const std::size_t n = chain.n_content_;
    std::vector<double> pi(n, 1.0 / static_cast<double>(n));
    std::vector<double> next(n);
    for (int iter = 0; iter < 10000; ++iter) {
        std::fill(next.begin(), next.end(), (1.0 - chain.damping_) / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const double mass = chain.damping_ * pi[i];
            for (const auto& [succ, w] : chain.successors_[i + 2]) {
                next[static_cast<std::size_t>(succ) - 2] += mass * w;
            }
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) delta += std::fabs(next[i] - pi[i]);
        pi.swap(next);
        if (delta < 1e-14) break;
    }
    chain.stationary_ = std::move(pi);
    return chain;
}

std::vector<double> MarkovChain::transition_row(int id) const {
    const std::size_t n = n_content_;
    std::vector<double> row(n, (1.0 - damping_) / static_cast<double>(n));
    for (const auto& [succ, w] : successors_[static_cast<std::size_t>(id)]) {
        row[static_cast<std::size_t>(succ) - 2] += damping_ * w;
    }
    return row;
}

int MarkovChain::sample_stationary(Rng& rng) const {
    double r = rng.uniform();
    for (std::size_t i = 0; i + 1 < stationary_.size(); ++i) {
        r -= stationary_[i];
        if (r < 0.0) return static_cast<int>(i) + 2;
    }
    return static_cast<int>(stationary_.size()) + 1;
}

int MarkovChain::sample_from(Rng& rng, int previous) const {
    if (rng.uniform() >= damping_) {
        return 2 + static_cast<int>(rng.below(n_content_));
    }
    const auto& row = successors_[static_cast<std::size_t>(previous)];
    double r = rng.uniform();
    for (const auto& [succ, w] : row) {
        r -= w;
        if (r < 0.0) return succ;
    }
    return row.back().first;
}

std::vector<int> MarkovChain::sample_sentence(Rng& rng, std::size_t length) const {
    std::vector<int> out;
    out.reserve(length);
    int prev = sample_stationary(rng);
    out.push_back(prev);
    for (std::size_t i = 1; i < length; ++i) {
        prev = sample_from(rng, prev);
        out.push_back(prev);
    }
    return out;
}

std::vector<int> derive_labels(const std::vector<int>& source, const std::vector<int>& target) {
    if (source.size() != target.size()) {
        throw DataError("label derivation needs aligned sequences, got " +
                        std::to_string(source.size()) + " vs " + std::to_string(target.size()));
    }
    std::vector<int> labels(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) labels[i] = source[i] != target[i] ? 1 : 0;
    return labels;
}

Sample corrupt(const std::vector<int>& sentence, double error_rate, const ConfusionTable& table,
               Rng& rng) {
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) {
        throw ConfigError("error rate must lie in [0,1]");
    }
    Sample s;
    s.target = sentence;
    s.source = sentence;
    for (std::size_t i = 0; i < sentence.size(); ++i) {
        if (!rng.bernoulli(error_rate)) continue;
        if (!table.has_confusables(sentence[i])) continue;
        const auto& row = table.entries[static_cast<std::size_t>(sentence[i])];
        std::vector<double> weights;
        weights.reserve(row.size());
        for (const auto& e : row) weights.push_back(e.second);
        s.source[i] = row[rng.pick_weighted(weights)].first;
    }
    s.det_labels = derive_labels(s.source, s.target);
    return s;
}

void CorpusSpec::validate() const {
    if (vocab_size < 2) throw ConfigError("corpus vocab_size must be at least 2");
    if (min_len == 0 || max_len < min_len) throw ConfigError("corpus length range is empty");
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) {
        throw ConfigError("error_rate must lie in [0,1]");
    }
    if (branching == 0 || branching >= vocab_size) {
        throw ConfigError("branching must lie in [1, vocab_size - 1]");
    }
    if (!(damping >= 0.0 && damping < 1.0)) {
        throw ConfigError("damping must lie in [0,1)");
    }
    if (confusables_min == 0 || confusables_max < confusables_min ||
        confusables_max >= vocab_size) {
        throw ConfigError("confusable count range invalid for this vocabulary");
    }
}

std::vector<std::vector<int>> generate_clean(const MarkovChain& chain, std::size_t count,
                                             std::size_t min_len, std::size_t max_len,
                                             std::uint64_t rng_seed, std::uint64_t stream_offset) {
    if (min_len == 0 || max_len < min_len) throw ConfigError("length range is empty");
    std::vector<std::vector<int>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(mix_seed(rng_seed, stream_offset + i));
        const std::size_t len = static_cast<std::size_t>(
            rng.uniform_int(static_cast<long>(min_len), static_cast<long>(max_len)));
        out.push_back(chain.sample_sentence(rng, len));
    }
    return out;
}

std::vector<Sample> generate_corpus(const MarkovChain& chain, const ConfusionTable& table,
                                    const CorpusSpec& spec, std::size_t count,
                                    std::uint64_t stream_offset) {
    spec.validate();
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        // One clean stream, one corruption stream, both keyed by sentence index.
        Rng gen_rng(mix_seed(spec.seed, stream_offset + i));
        const std::size_t len = static_cast<std::size_t>(
            gen_rng.uniform_int(static_cast<long>(spec.min_len), static_cast<long>(spec.max_len)));
        const std::vector<int> clean = chain.sample_sentence(gen_rng, len);
        Rng corrupt_rng(mix_seed(spec.seed ^ 0x5eedULL, stream_offset + i));
        out.push_back(corrupt(clean, spec.error_rate, table, corrupt_rng));
    }
    return out;
}

TsvLoadResult load_tsv(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read dataset file " + path);
    TsvLoadResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path + ":" + std::to_string(line_no) + ": missing TAB separator");
        }
        if (line.find('\t', tab + 1) != std::string::npos) {
            throw DataError(path + ":" + std::to_string(line_no) + ": more than one TAB");
        }
        Sample s;
        for (const auto& [text, dest] :
             {std::pair<std::string, std::vector<int>*>{line.substr(0, tab), &s.source},
              std::pair<std::string, std::vector<int>*>{line.substr(tab + 1), &s.target}}) {
            for (const auto& tok : utf8_split(text)) {
                const int id = vocab.id_or_unk(tok);
                if (id == Vocab::kUnk) ++result.unknown_tokens;
                dest->push_back(id);
            }
        }
        if (s.source.size() != s.target.size()) {
            throw DataError(path + ":" + std::to_string(line_no) + ": source length " +
                            std::to_string(s.source.size()) + " vs target length " +
                            std::to_string(s.target.size()));
        }
        if (s.source.empty()) {
            throw DataError(path + ":" + std::to_string(line_no) + ": empty sample");
        }
        s.det_labels = derive_labels(s.source, s.target);
        result.samples.push_back(std::move(s));
    }
    return result;
}

void save_tsv(const std::string& path, const std::vector<Sample>& samples, const Vocab& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset file " + path);
    for (const auto& s : samples) {
        for (int id : s.source) out << vocab.token(id);
        out << '\t';
        for (int id : s.target) out << vocab.token(id);
        out << '\n';
    }
}

std::string manifest_json(const CorpusSpec& spec, const Vocab& vocab) {
    nlohmann::json j;
    j["branching"] = spec.branching;
    j["confusables_max"] = spec.confusables_max;
    j["confusables_min"] = spec.confusables_min;
    j["counts"] = {{"dev", spec.dev}, {"test", spec.test}, {"train", spec.train}};
    j["damping"] = spec.damping;
    j["error_rate"] = spec.error_rate;
    j["grammar_seed"] = spec.grammar_seed;
    j["max_len"] = spec.max_len;
    j["min_len"] = spec.min_len;
    j["rng_seed"] = spec.seed;
    j["vocab_hash"] = vocab.hash_hex();
    j["vocab_size"] = spec.vocab_size;
    return j.dump(2) + "\n";
}

}  // namespace bidc
