#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "bidc/errors.hpp"
#include "bidc/evaluation.hpp"
#include "bidc/rng.hpp"

using namespace bidc;

namespace {

Sample make_sample(std::vector<int> source, std::vector<int> target) {
    Sample s;
    s.source = std::move(source);
    s.target = std::move(target);
    s.det_labels = derive_labels(s.source, s.target);
    return s;
}

SentencePrediction diff_prediction(const std::vector<int>& source,
                                   const std::vector<int>& corrected) {
    SentencePrediction p;
    p.corrected = corrected;
    for (std::size_t i = 0; i < source.size(); ++i) {
        p.det_labels.push_back(source[i] != corrected[i] ? 1 : 0);
    }
    return p;
}

}  // namespace

TEST_CASE("perfect single-error sentence scores 1.0 everywhere") {
    std::vector<Sample> gold = {make_sample({2, 3, 4}, {2, 9, 4})};
    std::vector<SentencePrediction> preds = {diff_prediction({2, 3, 4}, {2, 9, 4})};
    EvalReport r = evaluate(preds, gold);
    CHECK(r.sentence_detection.f1 == 1.0);
    CHECK(r.sentence_correction.f1 == 1.0);
    CHECK(r.character_detection.f1 == 1.0);
    CHECK(r.character_correction.f1 == 1.0);
    CHECK(r.hard_detection.f1 == 1.0);
    CHECK(r.consistency.character_level == 1.0);
    CHECK(r.consistency.sentence_level == 1.0);
}

TEST_CASE("all-clean set with silent model reports zero denominators") {
    std::vector<Sample> gold = {make_sample({2, 3}, {2, 3}), make_sample({4, 5}, {4, 5})};
    std::vector<SentencePrediction> preds = {diff_prediction({2, 3}, {2, 3}),
                                             diff_prediction({4, 5}, {4, 5})};
    EvalReport r = evaluate(preds, gold);
    CHECK(r.sentence_detection.precision == 0.0);
    CHECK(r.sentence_detection.recall == 0.0);
    CHECK(r.sentence_detection.f1 == 0.0);
    CHECK(r.sentence_detection.zero_denominator);
    CHECK(r.sentence_correction.zero_denominator);
    CHECK(r.consistency.character_level == 1.0);
}

TEST_CASE("three-sentence derived case: perfect, wrong-char, missed") {
    // s1 perfect correction of a one-error sentence
    // s2 flags the right position but writes the wrong character
    // s3 misses its error entirely
    std::vector<Sample> gold = {
        make_sample({2, 3, 4}, {2, 9, 4}),
        make_sample({5, 6, 7}, {5, 6, 8}),
        make_sample({9, 10, 11}, {12, 10, 11}),
    };
    std::vector<SentencePrediction> preds = {
        diff_prediction({2, 3, 4}, {2, 9, 4}),
        diff_prediction({5, 6, 7}, {5, 6, 13}),  // right slot, wrong char
        diff_prediction({9, 10, 11}, {9, 10, 11}),
    };
    EvalReport r = evaluate(preds, gold);
    CHECK(r.sentence_detection.tp == 2);
    CHECK(r.sentence_detection.fp == 0);
    CHECK(r.sentence_detection.fn == 1);
    CHECK(r.sentence_detection.precision == doctest::Approx(1.0));
    CHECK(r.sentence_detection.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.sentence_correction.tp == 1);
    CHECK(r.sentence_correction.fp == 1);
    CHECK(r.sentence_correction.fn == 2);
    CHECK(r.sentence_correction.precision == doctest::Approx(0.5));
    CHECK(r.sentence_correction.recall == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("hard detection follows the classifier labels, not the diff") {
    std::vector<Sample> gold = {make_sample({2, 3, 4}, {2, 9, 4})};
    SentencePrediction p = diff_prediction({2, 3, 4}, {2, 9, 4});
    p.det_labels = {0, 0, 0};  // classifier silent despite the diff
    EvalReport r = evaluate({p}, gold);
    CHECK(r.sentence_correction.f1 == 1.0);
    CHECK(r.hard_detection.tp == 0);
    CHECK(r.hard_detection.recall == 0.0);
    CHECK(r.hard_detection.f1 == 0.0);
    // one inconsistent position out of three
    CHECK(r.consistency.character_level == doctest::Approx(2.0 / 3.0));
    CHECK(r.consistency.sentence_level == 0.0);

    p.det_labels = {0, 1, 0};
    EvalReport r2 = evaluate({p}, gold);
    CHECK(r2.hard_detection.f1 == 1.0);
    CHECK(r2.consistency.character_level == 1.0);
}

TEST_CASE("character metrics: flag-everything on a ten percent error set") {
    // 10 positions, 1 gold error; the model rewrites every position and gets
    // the gold one right
    std::vector<int> source(10), target(10), corrected(10);
    for (int i = 0; i < 10; ++i) {
        source[i] = 2 + i;
        target[i] = 2 + i;
        corrected[i] = 30 + i;
    }
    target[4] = 25;
    corrected[4] = 25;
    std::vector<Sample> gold = {make_sample(source, target)};
    EvalReport r = evaluate({diff_prediction(source, corrected)}, gold);
    CHECK(r.character_detection.precision == doctest::Approx(0.1));
    CHECK(r.character_detection.recall == doctest::Approx(1.0));
    CHECK(r.character_correction.recall == doctest::Approx(1.0));
    CHECK(r.character_correction.precision == doctest::Approx(0.1));
}

TEST_CASE("consistency counts mixed sentences") {
    // two 5-token sentences; one position in the second disagrees
    std::vector<Sample> gold = {make_sample({2, 3, 4, 5, 6}, {2, 3, 4, 5, 6}),
                                make_sample({2, 3, 4, 5, 6}, {2, 3, 4, 5, 6})};
    SentencePrediction a = diff_prediction({2, 3, 4, 5, 6}, {2, 3, 4, 5, 6});
    SentencePrediction b = diff_prediction({2, 3, 4, 5, 6}, {2, 3, 4, 5, 6});
    b.det_labels[2] = 1;  // claims an error it did not write
    EvalReport r = evaluate({a, b}, gold);
    CHECK(r.consistency.character_level == doctest::Approx(9.0 / 10.0));
    CHECK(r.consistency.sentence_level == doctest::Approx(0.5));
}

TEST_CASE("alignment errors are rejected") {
    std::vector<Sample> gold = {make_sample({2, 3}, {2, 3})};
    SentencePrediction p;
    p.corrected = {2};
    p.det_labels = {0};
    CHECK_THROWS_AS(evaluate({p}, gold), DataError);
    CHECK_THROWS_AS(evaluate({}, gold), DataError);
}

TEST_CASE("empty dataset reports zeros with flags") {
    EvalReport r = evaluate({}, {});
    CHECK(r.sentence_detection.f1 == 0.0);
    CHECK(r.sentence_detection.zero_denominator);
    CHECK(r.consistency.total_positions == 0);
}

TEST_CASE("report json round trip and table rendering") {
    std::vector<Sample> gold = {make_sample({2, 3, 4}, {2, 9, 4}),
                                make_sample({5, 6}, {5, 6})};
    std::vector<SentencePrediction> preds = {diff_prediction({2, 3, 4}, {2, 9, 4}),
                                             diff_prediction({5, 6}, {5, 7})};
    EvalReport r = evaluate(preds, gold);
    nlohmann::json j = report_to_json(r);
    EvalReport back = report_from_json(j);
    CHECK(back.sentence_detection.f1 == r.sentence_detection.f1);
    CHECK(back.sentence_correction.tp == r.sentence_correction.tp);
    CHECK(back.hard_detection.fp == r.hard_detection.fp);
    CHECK(back.consistency.character_level == r.consistency.character_level);
    CHECK(report_to_json(back) == j);

    const std::string table = render_report_table(r);
    CHECK(table.find("sentence level") != std::string::npos);
    CHECK(table.find("hard detection") != std::string::npos);
    CHECK(table.find("consistency") != std::string::npos);
}

// ---- randomized properties against an independent brute-force recount ----

namespace {

struct BruteCounts {
    long sd_tp = 0, sd_fp = 0, sd_fn = 0;
    long sc_tp = 0, sc_fp = 0, sc_fn = 0;
    long hd_tp = 0, hd_fp = 0, hd_fn = 0;
    long cd_tp = 0, cd_fp = 0, cd_fn = 0;
    long cc_tp = 0, cc_fp = 0, cc_fn = 0;
    long cons_pos = 0, pos_total = 0, cons_sent = 0;
};

// straight nested loops, no shared code with the evaluation module
BruteCounts brute_force(const std::vector<SentencePrediction>& preds,
                        const std::vector<Sample>& gold) {
    BruteCounts c;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        bool any_gold = false, any_flag = false, any_hard = false;
        bool sets_eq = true, hard_sets_eq = true, exact = true, all_cons = true;
        for (std::size_t i = 0; i < gold[s].source.size(); ++i) {
            const bool ge = gold[s].target[i] != gold[s].source[i];
            const bool me = preds[s].corrected[i] != gold[s].source[i];
            const bool he = preds[s].det_labels[i] == 1;
            any_gold = any_gold || ge;
            any_flag = any_flag || me;
            any_hard = any_hard || he;
            if (ge != me) sets_eq = false;
            if (ge != he) hard_sets_eq = false;
            if (preds[s].corrected[i] != gold[s].target[i]) exact = false;
            if (me && ge) {
                c.cd_tp++;
                if (preds[s].corrected[i] == gold[s].target[i]) c.cc_tp++;
                else { c.cc_fp++; c.cc_fn++; }
            } else if (me) {
                c.cd_fp++;
                c.cc_fp++;
            } else if (ge) {
                c.cd_fn++;
                c.cc_fn++;
            }
            if (he == me) c.cons_pos++; else all_cons = false;
            c.pos_total++;
        }
        if (any_gold && sets_eq) c.sd_tp++;
        else {
            if (any_flag) c.sd_fp++;
            if (any_gold) c.sd_fn++;
        }
        if (any_gold && sets_eq && exact) c.sc_tp++;
        else {
            if (any_flag) c.sc_fp++;
            if (any_gold) c.sc_fn++;
        }
        if (any_gold && hard_sets_eq) c.hd_tp++;
        else {
            if (any_hard) c.hd_fp++;
            if (any_gold) c.hd_fn++;
        }
        if (all_cons) c.cons_sent++;
    }
    return c;
}

}  // namespace

TEST_CASE("random micro-datasets agree exactly with the brute-force recount") {
    Rng rng(404);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t sentences = 1 + rng.below(10);
        std::vector<Sample> gold;
        std::vector<SentencePrediction> preds;
        for (std::size_t s = 0; s < sentences; ++s) {
            const std::size_t len = 1 + rng.below(6);
            std::vector<int> source(len), target(len), corrected(len);
            SentencePrediction p;
            for (std::size_t i = 0; i < len; ++i) {
                source[i] = 2 + static_cast<int>(rng.below(5));
                target[i] = rng.bernoulli(0.25) ? 2 + static_cast<int>(rng.below(5)) : source[i];
                corrected[i] = rng.bernoulli(0.3) ? 2 + static_cast<int>(rng.below(5)) : source[i];
                p.det_labels.push_back(static_cast<int>(rng.below(2)));
            }
            p.corrected = corrected;
            gold.push_back(make_sample(source, target));
            preds.push_back(std::move(p));
        }
        EvalReport r = evaluate(preds, gold);
        BruteCounts c = brute_force(preds, gold);
        CHECK(r.sentence_detection.tp == c.sd_tp);
        CHECK(r.sentence_detection.fp == c.sd_fp);
        CHECK(r.sentence_detection.fn == c.sd_fn);
        CHECK(r.sentence_correction.tp == c.sc_tp);
        CHECK(r.sentence_correction.fp == c.sc_fp);
        CHECK(r.sentence_correction.fn == c.sc_fn);
        CHECK(r.hard_detection.tp == c.hd_tp);
        CHECK(r.hard_detection.fp == c.hd_fp);
        CHECK(r.hard_detection.fn == c.hd_fn);
        CHECK(r.character_detection.tp == c.cd_tp);
        CHECK(r.character_detection.fp == c.cd_fp);
        CHECK(r.character_detection.fn == c.cd_fn);
        CHECK(r.character_correction.tp == c.cc_tp);
        CHECK(r.character_correction.fp == c.cc_fp);
        CHECK(r.character_correction.fn == c.cc_fn);
        CHECK(r.consistency.consistent_positions == c.cons_pos);
        CHECK(r.consistency.consistent_sentences == c.cons_sent);

        // permuting sentence order never changes any score
        std::vector<std::size_t> perm(sentences);
        for (std::size_t i = 0; i < sentences; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<Sample> gold2;
        std::vector<SentencePrediction> preds2;
        for (std::size_t i : perm) {
            gold2.push_back(gold[i]);
            preds2.push_back(preds[i]);
        }
        EvalReport r2 = evaluate(preds2, gold2);
        CHECK(r2.sentence_detection.f1 == r.sentence_detection.f1);
        CHECK(r2.character_correction.f1 == r.character_correction.f1);
        CHECK(r2.consistency.character_level == r.consistency.character_level);

        // correcting exactly implies detecting exactly
        CHECK(r.sentence_correction.f1 <= r.sentence_detection.f1 + 1e-15);
        // f1 algebra
        for (const Prf* prf : {&r.sentence_detection, &r.sentence_correction, &r.hard_detection,
                               &r.character_detection, &r.character_correction}) {
            if (prf->precision + prf->recall > 0.0) {
                const double expect =
                    2.0 * prf->precision * prf->recall / (prf->precision + prf->recall);
                CHECK(std::fabs(prf->f1 - expect) <= 1e-12);
            } else {
                CHECK(prf->f1 == 0.0);
            }
        }
    }
}
