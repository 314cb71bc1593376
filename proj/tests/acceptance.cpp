// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, with wall time.
// Exit status is non-zero if any criterion fails.
#include "test_support.hpp"
#include "thinner/cost_model.hpp"
#include "thinner/fuzzy.hpp"
#include "thinner/harness.hpp"
#include "thinner/model.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

using namespace thinner;
namespace fs = std::filesystem;
namespace tt = thinner::testing;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) detail << "first failure: " << what << "; ";
            pass = false;
        }
    }
};

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// |a - b| scaled by (1 + max(|a|, |b|)): relative for large values, absolute near zero.
double mixed_error(double a, double b) { return std::abs(a - b) / (1.0 + std::max(std::abs(a), std::abs(b))); }

ModelConfig base_cost_config() {
    ModelConfig c;
    c.n_layers = 12;
    c.d = 768;
    c.heads = 12;
    c.ff_mult = 4;
    c.max_seq = 512;
    c.combo_tokens = 8;
    c.preservation = 0.9;
    c.vocab_size = 30522;
    return c;
}

// ---- AC-1 -------------------------------------------------------------------

void ac1(Outcome& o) {
    struct Anchor {
        std::size_t placement;
        double ratio;
        double reciprocal;
    };
    const Anchor anchors[] = {{11, 0.877, 1.14}, {7, 0.544, 1.84}};
    std::ostringstream report;
    report << "  calibration report (n=512, d=768, h=12, L=12, p=0.9, m=8)\n"
           << "  convention      placement  ratio   target        reciprocal  target\n";
    bool any_convention = false;
    for (auto kv : {KvProjection::before_gather, KvProjection::after_gather}) {
        cost::Convention conv;
        conv.kv_projection = kv;
        bool all = true;
        for (const auto& a : anchors) {
            ModelConfig c = base_cost_config();
            c.placement = a.placement;
            const auto r = cost::model_cost(c, conv);
            const bool ok_ratio = std::abs(r.ratio_vs_dense - a.ratio) <= 0.03;
            const bool ok_recip = std::abs(r.dense_over_this - a.reciprocal) <= 0.05;
            all = all && ok_ratio && ok_recip;
            report << "  " << (kv == KvProjection::before_gather ? "before_gather" : "after_gather ") << "   "
                   << a.placement << (a.placement < 10 ? " " : "") << "         " << fixed(r.ratio_vs_dense)
                   << "  " << fixed(a.ratio, 3) << "±0.03 " << (ok_ratio ? "ok  " : "MISS") << "  "
                   << fixed(r.dense_over_this, 3) << "       " << fixed(a.reciprocal, 2) << "±0.05 "
                   << (ok_recip ? "ok" : "MISS") << "\n";
        }
        any_convention = any_convention || all;
    }
    std::cout << report.str();
    o.expect(any_convention, "no single counting convention meets all four anchors");
}

// ---- AC-2 -------------------------------------------------------------------

void ac2(Outcome& o) {
    std::mt19937_64 rng(2024);
    double worst_attn = 0.0, worst_combine = 0.0;
    std::size_t select_mismatch = 0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        const std::size_t h = 1 + rng() % 2;
        const std::size_t d = h * (1 + rng() % (16 / h));
        const std::size_t n = 1 + rng() % 12;
        const std::size_t m = rng() % 3;
        const auto w = tt::random_block(d, h, 2 * d, rng);
        const Tensor x = tt::random_tensor({n + m, d}, rng);
        TokenSet kept;
        kept.combo_count = m;
        std::vector<bool> allowed(n + m, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (rng() % 3 != 0) {
                kept.embedded.push_back(i);
                allowed[i] = true;
            }
        }
        if (kept.embedded.empty() && m == 0) {
            kept.embedded.push_back(0);
            allowed[0] = true;
        }
        for (std::size_t i = n; i < n + m; ++i) allowed[i] = true;
        const auto oracle = tt::masked_dense_attention(x, w, allowed);
        for (auto kv : {KvProjection::before_gather, KvProjection::after_gather}) {
            AttentionOptions opt;
            opt.kv_projection = kv;
            const Tensor got = ftp_attention(x, w, kept, opt).out;
            for (std::size_t i = 0; i < oracle.size(); ++i) {
                worst_attn = std::max(worst_attn, mixed_error(got.data()[i], oracle[i]));
            }
        }

        std::vector<double> scores(n);
        std::uniform_int_distribution<int> level(0, 4);
        for (auto& s : scores) s = 0.1 * level(rng);
        fuzzy::ImportanceProfile profile;
        profile.scores = scores;
        for (std::size_t i = 0; i < n; ++i) {
            (rng() % 4 == 0 ? profile.protected_set : profile.candidates).push_back(i);
        }
        const std::size_t budget = rng() % (n + 1);
        const TokenSet sel = select_tokens(scores, profile, budget, TokenSet::all(n, 0));
        select_mismatch += sel.embedded != tt::brute_force_select(scores, profile.protected_set, budget);

        const std::size_t mc = 1 + rng() % 4;
        const auto cw = tt::random_combiner(d, rng, trial % 2 == 0);
        const Tensor e = tt::random_tensor({n, d}, rng);
        const Tensor c = tt::random_tensor({mc, d}, rng);
        std::vector<std::size_t> owner(n);
        std::vector<double> a(mc * n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            owner[j] = rng() % mc;
            a[owner[j] * n + j] = 1.0;
        }
        const Tensor got = combine(Tensor::from({mc, n}, a), e, c, cw);
        const auto want = tt::grouping_oracle(owner, e, c, cw);
        for (std::size_t i = 0; i < want.size(); ++i) {
            worst_combine = std::max(worst_combine, mixed_error(got.data()[i], want[i]));
        }
    }
    o.detail << trials << " instances; attention max err " << worst_attn << ", combine max err "
             << worst_combine << ", selection mismatches " << select_mismatch << "; ";
    o.expect(worst_attn <= 1e-12, "pruned attention deviates from masked-dense attention");
    o.expect(select_mismatch == 0, "selection disagrees with exhaustive search");
    o.expect(worst_combine <= 1e-12, "combine deviates from the grouping oracle");
}

// ---- AC-3 -------------------------------------------------------------------

void ac3(Outcome& o) {
    ModelConfig c;
    c.n_layers = 4;
    c.d = 8;
    c.heads = 2;
    c.ff_mult = 2;
    c.max_seq = 16;
    c.combo_tokens = 3;
    c.preservation = 0.7;
    c.placement = 3;
    c.vocab_size = 40;
    c.num_classes = 3;
    c.init_std = 0.3;
    const Model model = Model::build(c, 31);
    std::mt19937_64 rng(31);
    std::vector<TokenId> ids(14);
    for (auto& id : ids) id = static_cast<TokenId>(1 + rng() % 39);

    const auto trace = model.infer(ids).layers;
    o.expect(trace[2].embedded_keys < 14, "pruning did not drop any token");

    std::vector<Tensor> inputs;
    for (const auto& [name, t] : model.parameters()) inputs.push_back(t);
    // Two coordinates from each of ten parameters that receive a gradient.
    std::vector<Tensor> live;
    {
        for (auto t : inputs) t.zero_grad();
        cross_entropy_with_logits(model.forward(ids, false, nullptr, AssignMode::soft).logits, 2).backward();
        for (auto& t : inputs) {
            bool any = false;
            if (t.has_grad()) {
                for (double g : t.grad()) any = any || g != 0.0;
            }
            if (any) live.push_back(t);
        }
    }
    std::shuffle(live.begin(), live.end(), rng);
    live.resize(std::min<std::size_t>(live.size(), 10));
    const auto gc = tt::check_gradients(
        [&] { return cross_entropy_with_logits(model.forward(ids, false, nullptr, AssignMode::soft).logits, 2); },
        live, 1e-5, 20 / live.size(), 5);
    o.detail << gc.checked << " coordinates, worst rel err " << gc.worst << "; ";
    o.expect(gc.checked >= 20, "fewer than 20 coordinates checked");
    o.expect(gc.worst <= 1e-3, "finite differences disagree: " + gc.where);

    // Straight-through identity on random similarity matrices.
    bool identical = true;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor sim = tt::random_tensor({1 + rng() % 5, 1 + rng() % 8}, rng, 0.0, 1.0);
        const auto a = hard_assign(sim);
        tt::weighted_sum(a.hard, trial).backward();
        const std::vector<double> hard(sim.grad().begin(), sim.grad().end());
        sim.zero_grad();
        tt::weighted_sum(sim, trial).backward();
        for (std::size_t i = 0; i < hard.size(); ++i) identical = identical && hard[i] == sim.grad()[i];
    }
    o.expect(identical, "hard-path gradient differs from the soft-path gradient");
}

// ---- AC-4 -------------------------------------------------------------------

void ac4(Outcome& o, const fs::path& config_path) {
    const RunConfig base = load_run_config(config_path);
    RunConfig dense = base;
    dense.model = with_variant(base.model, Variant::dense);
    dense.name = base.name + "-dense";
    RunConfig ours = base;
    ours.model = with_variant(base.model, Variant::pruned_combined);
    ours.name = base.name + "-ours";
    const RunArtifacts d = run(dense);
    const RunArtifacts p = run(ours);
    const double acc_d = d.report.test.accuracy, acc_p = p.report.test.accuracy;
    o.detail << "dense acc " << fixed(acc_d) << " (" << fixed(d.report.wall_time_s, 1) << " s), ours-PFC acc "
             << fixed(acc_p) << " (" << fixed(p.report.wall_time_s, 1) << " s); ";
    o.expect(acc_p >= acc_d - 0.05, "ours-PFC trails dense by more than 5 points");
    o.expect(acc_d > 0.9, "dense accuracy not above 90%");
    o.expect(acc_p > 0.9, "ours-PFC accuracy not above 90%");
}

// ---- AC-5 -------------------------------------------------------------------

void ac5(Outcome& o) {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(0.0, 1.0), k(0.1, 10.0), shift(-5.0, 5.0);
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<double> s(n);
        for (auto& v : s) v = u(rng);
        const auto p = fuzzy::partition(s);
        for (std::size_t i = 0; i < n; ++i) violations += p.importance[i] + p.unimportance[i] != 1.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (s[i] < s[j]) {
                    violations += p.importance[i] > p.importance[j];
                    violations += p.unimportance[i] < p.unimportance[j];
                }
            }
        const double scale = k(rng), off = shift(rng);
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = scale * s[i] + off;
        const auto q = fuzzy::partition(t);
        violations += q.protected_set != p.protected_set;
        violations += q.candidates != p.candidates;

        const std::vector<double> flat(n, u(rng));
        const auto f = fuzzy::partition(flat);
        violations += f.protected_set.size() != n;
    }
    o.detail << "1000 vectors, " << violations << " violations; ";
    o.expect(violations == 0, "fuzzy property violated");
}

// ---- AC-6 -------------------------------------------------------------------

void ac6(Outcome& o) {
    ModelConfig c;
    c.n_layers = 12;
    c.d = 16;
    c.heads = 2;
    c.ff_mult = 2;
    c.max_seq = 512;
    c.preservation = 0.9;
    c.placement = 0;
    c.fuzzy = false;  // ideal run: no protected overflow
    c.vocab_size = 50;
    const Model model = Model::build(c, 6);
    std::mt19937_64 rng(6);
    std::vector<TokenId> ids(512);
    for (auto& id : ids) id = static_cast<TokenId>(1 + rng() % 49);
    const auto trace = model.infer(ids).layers;
    const std::vector<std::size_t> chain = {512, 460, 414, 372, 334, 300, 270, 243, 218, 196, 176, 158};
    std::vector<std::size_t> got;
    for (const auto& l : trace) got.push_back(l.embedded_keys);
    o.expect(got == chain, "token trace departs from the preservation chain");
    o.expect(cost::ideal_schedule(c, 512) == chain, "ideal schedule departs from the preservation chain");
    o.detail << "trace 512->" << got[1] << "->" << got[2] << "->...->" << got.back() << "; ";

    ModelConfig dc = c;
    dc.max_seq = 24;
    dc.n_layers = 3;
    dc.preservation = 1.0;
    dc.fuzzy = true;
    const Model dense = Model::build(dc, 61);
    bool bitwise = true;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<TokenId> x(1 + rng() % 24);
        for (auto& id : x) id = static_cast<TokenId>(1 + rng() % 49);
        const Tensor a = dense.infer(x).logits;
        const Tensor b = tt::vanilla_encoder(dense, x);
        for (std::size_t i = 0; i < a.size(); ++i) bitwise = bitwise && a.data()[i] == b.data()[i];
    }
    o.expect(bitwise, "p=1, no-combiner model differs from a plain encoder");
}

// ---- AC-7 -------------------------------------------------------------------

void ac7(Outcome& o) {
    const fs::path dir = fs::temp_directory_path() / ("thinner_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);

    RunConfig rc;
    rc.name = "plumbing";
    rc.seed = 17;
    rc.model.n_layers = 3;
    rc.model.d = 16;
    rc.model.heads = 2;
    rc.model.ff_mult = 2;
    rc.model.max_seq = 16;
    rc.model.combo_tokens = 2;
    rc.model.preservation = 0.8;
    rc.model.placement = 2;
    rc.model.vocab_size = 100;
    rc.data.train_size = 80;
    rc.data.test_size = 40;
    rc.data.seq_len = 12;
    rc.train.epochs = 2;
    rc.train.batch_size = 8;
    const RunArtifacts a = run(rc, dir / "a");
    const RunArtifacts b = run(rc, dir / "b");
    o.expect(same_outcome(a.report, b.report), "reruns produced different reports");

    const Model loaded = load_checkpoint(dir / "a" / "checkpoint.bin");
    bool exact = loaded.parameters().size() == a.model->parameters().size();
    for (std::size_t p = 0; exact && p < loaded.parameters().size(); ++p) {
        const auto x = loaded.parameters()[p].second.data();
        const auto y = a.model->parameters()[p].second.data();
        exact = x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin());
    }
    o.expect(exact, "checkpoint round trip is not bit-exact");
    fs::remove_all(dir);

    std::size_t mismatched = 0, layers = 0;
    for (auto kv : {KvProjection::before_gather, KvProjection::after_gather}) {
        for (std::size_t placement : {0u, 2u, 3u}) {
            ModelConfig c = rc.model;
            c.placement = placement;
            c.fuzzy = false;
            c.kv_projection = kv;
            const Model m = Model::build(c, 3);
            std::vector<TokenId> ids(16);
            std::mt19937_64 rng(placement);
            for (auto& id : ids) id = static_cast<TokenId>(1 + rng() % 99);
            const auto out = m.infer(ids);
            cost::Convention conv;
            conv.kv_projection = kv;
            const auto r = cost::model_cost(c, conv);
            for (std::size_t l = 0; l < r.layers.size(); ++l) {
                ++layers;
                mismatched += out.layers[l].macs != r.layers[l].macs();
            }
        }
    }
    o.detail << layers << " layers compared, " << mismatched << " MAC mismatches; ";
    o.expect(mismatched == 0, "instrumented MACs differ from the analytical count");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string config = std::string(THINNER_CONFIG_DIR) + "/toy.json";
    std::vector<int> only;
    app.add_option("--config", config, "Run config for the learning criterion")->check(CLI::ExistingFile);
    app.add_option("--only", only, "Criterion numbers to run (default all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    struct Criterion {
        int id;
        double limit_s;
        std::function<void(Outcome&)> body;
    };
    const std::vector<Criterion> criteria = {
        {1, 1.0, ac1},
        {2, 30.0, ac2},
        {3, 120.0, ac3},
        {4, 600.0, [&](Outcome& o) { ac4(o, config); }},
        {5, 5.0, ac5},
        {6, 60.0, ac6},
        {7, 60.0, ac7},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.body(o);
        } catch (const std::exception& e) {
            o.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        o.expect(secs < c.limit_s, "runtime " + fixed(secs, 2) + " s exceeds " + fixed(c.limit_s, 0) + " s");
        failures += !o.pass;
        std::cout << "AC-" << c.id << " " << (o.pass ? "PASS" : "FAIL") << "  " << fixed(secs, 2) << " s  "
                  << o.detail.str() << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
