// One PASS/FAIL line per acceptance criterion. Pass criterion numbers as
// arguments to run a subset, e.g. `acceptance 1 3 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "lightpeft/artifact_io.hpp"
#include "lightpeft/bench.hpp"
#include "lightpeft/errors.hpp"
#include "lightpeft/ops.hpp"
#include "lightpeft/optimizer.hpp"
#include "lightpeft/peft_prune.hpp"
#include "lightpeft/sweep.hpp"

using namespace lightpeft;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome gradient_integrity() {
  Rng rng(101);
  double worst = 0.0;
  std::string worst_name;
  auto check = [&](const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> params) {
    lptest::GradCheck g = lptest::check_gradients(loss, std::move(params), 1e-5);
    if (g.max_rel_error >= worst) {
      worst = g.max_rel_error;
      worst_name = name + " (" + g.worst + ")";
    }
  };
  auto away_from = [&](Shape s, double gap) {
    Tensor t = lptest::random_tensor(s, rng);
    for (double& v : t.mutable_data()) {
      if (std::abs(v) < gap) v += v < 0 ? -gap : gap;
    }
    return t;
  };
  // A random projection makes every op's output feed a nontrivial loss.
  auto project = [&](const Tensor& y) {
    Tensor w = lptest::random_tensor(y.shape(), rng, false);
    return [w](const Tensor& t) { return sum(mul(t, w)); };
  };

  {
    Tensor a = lptest::random_tensor({3, 4}, rng), b = lptest::random_tensor({4, 5}, rng);
    auto p = project(matmul(a, b));
    check("matmul", [&] { return p(matmul(a, b)); }, {a, b});
    Tensor a3 = lptest::random_tensor({2, 3, 4}, rng);
    auto p3 = project(matmul(a3, b));
    check("matmul batched", [&] { return p3(matmul(a3, b)); }, {a3, b});
  }
  {
    Tensor a = lptest::random_tensor({2, 3, 4}, rng), b = lptest::random_tensor({4}, rng);
    auto p = project(a);
    check("add broadcast", [&] { return p(add(a, b)); }, {a, b});
    check("mul broadcast", [&] { return p(mul(a, b)); }, {a, b});
  }
  {
    Tensor x = away_from({3, 5}, 0.05);
    auto p = project(x);
    check("relu", [&] { return p(activation(x, Activation::relu)); }, {x});
    check("gelu", [&] { return p(activation(x, Activation::gelu)); }, {x});
    check("scale", [&] { return p(scale(x, -1.7)); }, {x});
    check("abs_sum", [&] { return abs_sum(x); }, {x});
    check("sum", [&] { return scale(sum(mul(x, x)), 0.5); }, {x});
  }
  {
    Tensor logits = lptest::random_tensor({4, 3}, rng);
    const std::vector<int> labels{0, 2, 1, 2};
    check("softmax_ce", [&] { return softmax_ce_loss(logits, labels); }, {logits});
  }
  {
    Tensor x = lptest::random_tensor({2, 3, 6}, rng), g = lptest::random_tensor({6}, rng),
           b = lptest::random_tensor({6}, rng);
    auto p = project(x);
    check("layer_norm", [&] { return p(layer_norm(x, g, b, 1e-5)); }, {x, g, b});
  }
  {
    Tensor table = lptest::random_tensor({7, 3}, rng);
    const std::vector<int> ids{1, 4, 4, 0, 6, 1};
    auto p = project(Tensor::zeros({2, 3, 3}));
    check("embedding", [&] { return p(embedding(table, ids, {2, 3})); }, {table});
    Tensor x = lptest::random_tensor({2, 3, 4}, rng);
    auto pm = project(Tensor::zeros({2, 4}));
    check("mean_pool", [&] { return pm(mean_pool(x)); }, {x});
  }
  for (bool causal : {false, true}) {
    Tensor q = lptest::random_tensor({2, 4, 6}, rng), k = lptest::random_tensor({2, 4, 6}, rng),
           v = lptest::random_tensor({2, 4, 6}, rng);
    auto p = project(q);
    check(causal ? "attention causal" : "attention",
          [&] { return p(attention(q, k, v, {3, 2, causal})); }, {q, k, v});
  }
  {
    Tensor x = lptest::random_tensor({2, 3, 6}, rng), m = lptest::random_tensor({3}, rng);
    auto p = project(x);
    check("scale_column_groups", [&] { return p(scale_column_groups(x, m, 2)); }, {x, m});
  }
  {
    FoundationModel host = FoundationModel::init(lptest::tiny_config(1, 6, 2, 6), 3);
    PeftSet set = attach_estimation_set(host, {PeftKind::lora, 2, 2.0}, rng);
    lptest::randomize_peft(set, rng);
    Tensor x = lptest::random_tensor({3, 6}, rng);
    auto p = project(x);
    const PeftModule& lora = set.modules[0];
    check("lora_delta", [&] { return p(lora_delta(x, lora)); }, {x, lora.w_down, lora.w_up});
    PeftSet aset = attach_estimation_set(host, {PeftKind::adapter, 2, 1.0}, rng);
    lptest::randomize_peft(aset, rng);
    const PeftModule& ad = aset.modules[0];
    check("adapter", [&] { return p(adapter_apply(x, ad, Activation::gelu)); }, {x, ad.w_down, ad.w_up});
  }
  {
    FoundationModel m = FoundationModel::init(lptest::tiny_config(2, 8, 2, 12), 7);
    for (LayerWeights& w : m.layers) {
      for (Tensor* t : {&w.ln1_gain, &w.ln1_bias, &w.ln2_gain, &w.ln2_bias}) {
        for (double& v : t->mutable_data()) v += rng.uniform(-0.3, 0.3);
      }
    }
    m.set_foundation_requires_grad(true);
    MaskSet masks = lptest::random_masks(m, rng, 0.3, 1.4, true);
    PeftSet lora = attach_estimation_set(m, {PeftKind::lora, 2, 2.0}, rng);
    lptest::randomize_peft(lora, rng);
    TokenBatch batch = lptest::random_batch(m.config, 3, 5, rng);
    std::vector<Tensor> params = m.foundation_parameters();
    for (const Tensor& t : m.classifier_parameters()) params.push_back(t);
    for (const Tensor& t : masks.parameters()) params.push_back(t);
    for (const Tensor& t : lora.parameters()) params.push_back(t);
    check("2-layer model",
          [&] {
            return mask_loss(softmax_ce_loss(model_forward(m, batch, {&masks, &lora, nullptr}), batch.labels), masks,
                             {1e-4, 1e-4});
          },
          params);
  }
  return {worst < 1e-4, fmt("worst relative error %.2e", worst) + " at " + worst_name};
}

// ---------------------------------------------------------------- 2

Outcome mask_equivalence() {
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t heads = 1 + rng.below(4);
    const std::size_t head_dim = 1 + rng.below(4);
    ModelConfig cfg = lptest::tiny_config(1 + rng.below(3), heads * head_dim, heads, 2 + rng.below(14));
    cfg.activation = rng.below(2) ? Activation::gelu : Activation::relu;
    cfg.causal = rng.below(2) == 1;
    FoundationModel model = FoundationModel::init(cfg, rng.next_u64());
    MaskSet masks = lptest::random_masks(model, rng, 0.2, 1.5);
    PruningPlan plan = PruningPlan::keep_all(cfg);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      plan.heads[l].clear();
      plan.ffn[l].clear();
      auto h = masks.head[l].mutable_data();
      const std::size_t spare_h = rng.below(h.size());
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (i != spare_h && rng.uniform() < 0.4) h[i] = 0.0;
        if (h[i] != 0.0) plan.heads[l].push_back(i);
      }
      auto f = masks.ffn[l].mutable_data();
      const std::size_t spare_f = rng.below(f.size());
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (i != spare_f && rng.uniform() < 0.4) f[i] = 0.0;
        if (f[i] != 0.0) plan.ffn[l].push_back(i);
      }
    }
    TokenBatch batch = lptest::random_batch(cfg, 3, 1 + rng.below(cfg.max_seq), rng);
    NoGradGuard guard;
    Tensor masked = model_forward(model, batch, {&masks, nullptr, nullptr});
    FoundationModel small = materialize(model, plan, &masks);
    Tensor pruned = model_forward(small, batch, {});
    worst = std::max(worst, lptest::max_abs_diff(masked, pruned));
  }
  return {worst <= 1e-8, fmt("50 configurations, max |logit difference| %.2e", worst)};
}

// ---------------------------------------------------------------- 3

Outcome zero_delta_init() {
  ModelConfig cfg;
  FoundationModel model = FoundationModel::init(cfg, 303);
  Rng rng(304);
  PeftSet lora = attach_estimation_set(model, {PeftKind::lora, 8, 2.0}, rng);
  TokenBatch batch = lptest::random_batch(cfg, 8, cfg.max_seq, rng);
  NoGradGuard guard;
  Tensor plain = model_forward(model, batch, {});
  ModuleProbe probe;
  Tensor with = model_forward(model, batch, {nullptr, &lora, &probe});
  const double diff = lptest::max_abs_diff(plain, with);
  std::size_t nonzero = 0, observed = 0;
  for (std::size_t i = 0; i < lora.modules.size(); ++i) {
    observed += probe.observed[i] ? 1 : 0;
    nonzero += probe.importance[i] != 0.0 ? 1 : 0;
  }
  const bool pass = diff <= 1e-12 && nonzero == 0 && observed == lora.modules.size();
  return {pass, fmt("%g modules, max |logit difference| %.2e, ", static_cast<double>(lora.modules.size()), diff) +
                    std::to_string(nonzero) + " nonzero module importances"};
}

// ---------------------------------------------------------------- 4

Outcome selection_arithmetic() {
  ModelConfig large;
  large.layers = 24;
  large.hidden = 1024;
  large.heads = 16;
  large.ffn_dim = 4096;
  large.vocab_size = 50265;
  large.max_seq = 514;
  Rng rng(404);
  MaskSet masks;
  for (std::size_t l = 0; l < large.layers; ++l) {
    masks.head.push_back(lptest::random_tensor({16}, rng, false, 0.0, 1.0));
    masks.ffn.push_back(lptest::random_tensor({4096}, rng, false, 0.0, 1.0));
  }
  HeadLayout layout{select_heads(masks, 5.0 / 16.0).keep, select_ffn_dims(masks, 1.0 / 3.0).keep};
  const double retention = static_cast<double>(foundation_param_count(large, layout)) /
                           static_cast<double>(foundation_param_count(large, HeadLayout::dense(large)));

  // 32 layers x 6 LoRA sites of a 4096-wide decoder.
  ImportanceLedger ledger;
  for (std::size_t l = 0; l < 32; ++l) {
    for (Site s : {Site::q, Site::k, Site::v, Site::o, Site::fc1, Site::fc2}) {
      LedgerEntry e;
      e.attach = {l, s};
      e.batches = 1;
      e.mean_importance = rng.uniform();
      e.rank_importance.assign(8, 0.0);
      ledger.entries.push_back(e);
    }
  }
  const std::size_t kept = select_modules(ledger, 0.75).size();
  const bool pass = std::abs(retention - 0.72) <= 0.02 && kept == 48 && ledger.entries.size() == 192;
  return {pass, fmt("encoder retention %.4f (target 0.72 +/- 0.02), ", retention) + "modules kept " +
                    std::to_string(kept) + " of " + std::to_string(ledger.entries.size())};
}

// ---------------------------------------------------------------- 5

Outcome taylor_oracle() {
  RunConfig cfg = lptest::quick_run_config(TaskKind::pattern_match, 505);
  cfg.train.total_steps = 40;
  cfg.train.estimation_steps = 20;
  cfg = cfg.resolved();
  const TaskData data = generate(cfg.task);
  auto fresh = [&] {
    FoundationModel model = FoundationModel::init(cfg.model, cfg.train.seed);
    Rng prng(Rng::mix(cfg.train.seed, 0x9ef7));
    PeftSet peft = attach_estimation_set(model, cfg.peft, prng);
    return std::make_pair(std::move(model), std::move(peft));
  };

  auto [model, peft] = fresh();
  MaskSet masks = MaskSet::ones(model);
  BatchStream stream(data.train, cfg.train.batch_size, 77);
  const EstimationResult est = estimate(model, peft, masks, stream, cfg.train, 20);

  // Oracle: the same trajectory with every weight and gradient stored, and
  // the scores recomputed from the full history afterwards.
  auto [omodel, opeft] = fresh();
  MaskSet omasks = MaskSet::ones(omodel);
  BatchStream ostream(data.train, cfg.train.batch_size, 77);
  std::vector<ParamGroup> groups;
  for (const Tensor& t : opeft.parameters()) groups.push_back({t, true});
  for (const Tensor& t : omasks.parameters()) groups.push_back({t, false});
  groups.push_back({omodel.classifier_weight, true});
  groups.push_back({omodel.classifier_bias, false});
  AdamW opt(groups, cfg.train.adamw);
  struct Snapshot {
    std::vector<double> down, down_grad, up, up_grad;
  };
  std::vector<std::vector<Snapshot>> history(opeft.modules.size());
  for (std::size_t step = 0; step < 20; ++step) {
    const TokenBatch batch = ostream.next();
    opt.clear_grads();
    Tensor logits = model_forward(omodel, batch, {&omasks, &opeft, nullptr});
    backward(mask_loss(softmax_ce_loss(logits, batch.labels), omasks, cfg.train.penalty));
    for (std::size_t i = 0; i < opeft.modules.size(); ++i) {
      const PeftModule& m = opeft.modules[i];
      Snapshot s;
      s.down.assign(m.w_down.data().begin(), m.w_down.data().end());
      s.up.assign(m.w_up.data().begin(), m.w_up.data().end());
      s.down_grad.assign(m.w_down.grad().begin(), m.w_down.grad().end());
      s.up_grad.assign(m.w_up.grad().begin(), m.w_up.grad().end());
      history[i].push_back(std::move(s));
    }
    opt.step(warmup_lr(cfg.train.lr_estimation, step, 20, cfg.train.warmup_fraction));
  }

  double worst = 0.0, largest = 0.0;
  struct Scored {
    double score;
    std::size_t module, rank;
  };
  std::vector<Scored> pool;
  for (std::size_t i = 0; i < opeft.modules.size(); ++i) {
    const PeftModule& m = opeft.modules[i];
    const std::size_t r = m.rank, din = m.d_in(), dout = m.d_out();
    for (std::size_t k = 0; k < r; ++k) {
      double total = 0.0;
      for (const Snapshot& s : history[i]) {
        for (std::size_t row = 0; row < din; ++row) total += std::abs(s.down_grad[row * r + k] * s.down[row * r + k]);
        for (std::size_t col = 0; col < dout; ++col) total += std::abs(s.up_grad[k * dout + col] * s.up[k * dout + col]);
      }
      worst = std::max(worst, std::abs(total - est.ledger.entries[i].rank_importance[k]));
      largest = std::max(largest, total);
      pool.push_back({total, i, k});
    }
  }

  // Global argsort over all ranks of all modules, lowest scores dropped.
  std::vector<std::size_t> all(opeft.modules.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const double rate = 0.5;
  const RankSelection sel = select_ranks(est.ledger, all, rate);
  std::stable_sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) {
    return std::tie(a.score, a.module, a.rank) < std::tie(b.score, b.module, b.rank);
  });
  std::vector<std::vector<std::size_t>> oracle(all.size());
  for (std::size_t p = drop_count(rate, pool.size()); p < pool.size(); ++p) {
    oracle[pool[p].module].push_back(pool[p].rank);
  }
  bool same = true;
  std::size_t forced = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (oracle[i].empty()) {
      // A module losing every rank keeps its best one.
      const auto& ranks = est.ledger.entries[i].rank_importance;
      oracle[i].push_back(static_cast<std::size_t>(std::max_element(ranks.begin(), ranks.end()) - ranks.begin()));
      ++forced;
    }
    std::sort(oracle[i].begin(), oracle[i].end());
    if (oracle[i] != sel.keep[i]) {
      same = false;
      std::cerr << "module " << i << " differs\n";
    }
  }
  same = same && forced == sel.forced;
  return {worst <= 1e-10 && same,
          fmt("20 steps, max |incremental - oracle| %.2e (largest score %.3g), ", worst, largest) +
              (same ? "selection matches oracle argsort" : "selection differs from oracle argsort")};
}

// ---------------------------------------------------------------- 6

RunConfig quality_config(TaskKind kind, std::uint64_t seed) {
  RunConfig c;
  c.task.kind = kind;
  c.train.seed = seed;
  c.train.rho_heads = 0.25;
  c.train.rho_ffn = 1.0 / 3.0;
  c.train.rho_modules = 0.5;
  c.train.rho_ranks = 0.5;
  c.train.total_steps = 400;
  c.train.estimation_steps = 40;
  return c;
}

Outcome quality_retention() {
  std::ostringstream detail;
  bool pass = true;
  for (TaskKind kind : {TaskKind::parity, TaskKind::majority, TaskKind::pattern_match}) {
    double light = 0.0, base = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const RunConfig cfg = quality_config(kind, seed);
      light += run_light_peft(cfg).report.accuracy / 3.0;
      base += run_lora_baseline(cfg).report.accuracy / 3.0;
    }
    const bool ok = light >= base - 0.02;
    pass = pass && ok;
    detail << to_string(kind) << fmt(" %.3f vs %.3f; ", light, base);
  }
  return {pass, detail.str() + "light-peft mean accuracy vs LoRA baseline, 3 seeds, allowed drop 0.02"};
}

// ---------------------------------------------------------------- 7

Outcome efficiency_direction() {
  RunConfig cfg;
  cfg.train.seed = 707;
  BenchOptions opt;
  opt.batches = 10;
  opt.repetitions = 5;
  opt.prune_heads = 0.5;
  opt.prune_ffn = 0.5;
  const BenchResult r = run_bench(cfg, BenchMode::pruned_vs_dense, opt);
  const BenchRow& dense = r.rows[0];
  const BenchRow& pruned = r.rows[1];
  const double retention =
      static_cast<double>(pruned.params.foundation) / static_cast<double>(dense.params.foundation);
  const double reduction = 1.0 - pruned.memory_ratio;
  const bool pass = pruned.forward_speedup >= 1.2 - 0.15 && reduction >= 0.30;
  return {pass, fmt("foundation retention %.3f, forward speedup %.2fx (need 1.2 - 0.15), backward %.2fx, "
                    "training bytes -%.1f%% (need 30%%)",
                    retention, pruned.forward_speedup, pruned.backward_speedup, 100.0 * reduction)};
}

// ---------------------------------------------------------------- 8

RunConfig sweep_config() {
  RunConfig c;
  c.task.kind = TaskKind::pattern_match;
  c.train.seed = 800;
  return c;
}

std::string accuracies(const SweepResult& r) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    os << (i ? " " : "") << r.rows[i].value << ":" << fmt("%.3f", r.rows[i].accuracy);
  }
  os << "]";
  return os.str();
}

Outcome sweep_shapes() {
  const RunConfig base = sweep_config();
  const std::size_t seeds = 2;
  std::ostringstream detail;
  bool pass = true;

  // Masks shrink monotonically with the penalty, and the strongest penalty
  // does not beat the weakest.
  const SweepResult lam = run_sweep(base, SweepAxis::lambda, {1e-5, 1e-4, 1e-3, 1e-2}, seeds);
  bool lam_ok = lam.rows.back().accuracy <= lam.rows.front().accuracy + 0.02;
  for (std::size_t i = 1; i < lam.rows.size(); ++i) {
    lam_ok = lam_ok && lam.rows[i].mean_head_mask <= lam.rows[i - 1].mean_head_mask &&
             lam.rows[i].mean_ffn_mask <= lam.rows[i - 1].mean_ffn_mask;
  }
  detail << "lambda " << accuracies(lam) << (lam_ok ? " ok" : " FAIL") << "; ";
  pass = pass && lam_ok;

  // Mild loss at light pruning, a sharp drop at the far end.
  const SweepResult rho = run_sweep(base, SweepAxis::rho, {0.0, 0.25, 0.5, 0.9}, seeds);
  const double mild = rho.rows[0].accuracy - rho.rows[1].accuracy;
  const double sharp = rho.rows[2].accuracy - rho.rows[3].accuracy;
  const bool rho_ok = mild <= 0.03 && sharp >= 0.05 && sharp > mild;
  detail << "rho " << accuracies(rho) << (rho_ok ? " ok" : " FAIL") << "; ";
  pass = pass && rho_ok;

  // Estimating longer than a small fraction buys nothing.
  const SweepResult tp = run_sweep(base, SweepAxis::t_prime, {0.05, 0.1, 0.3, 0.5}, seeds);
  const double early = std::max(tp.rows[0].accuracy, tp.rows[1].accuracy);
  const bool tp_ok = tp.rows[3].accuracy <= early + 0.02 && tp.rows[2].accuracy <= early + 0.02;
  detail << "t_prime " << accuracies(tp) << (tp_ok ? " ok" : " FAIL");
  pass = pass && tp_ok;
  return {pass, detail.str()};
}

// ---------------------------------------------------------------- 9

Outcome persistence_and_swap() {
  // Task A defines the shared pruned base.
  RunConfig cfg_a;
  cfg_a.task.kind = TaskKind::parity;
  cfg_a.train.seed = 900;
  cfg_a.train.total_steps = 200;
  cfg_a.train.estimation_steps = 20;
  RunArtifacts a = run_light_peft(cfg_a);
  const FoundationModel& base = a.model;

  // Task B gets its own adapter on the same base and the same sites.
  RunConfig cfg_b = cfg_a;
  cfg_b.task.kind = TaskKind::majority;
  cfg_b.task.seed = 901;
  const RunConfig rb = cfg_b.resolved();
  const TaskData data_b = generate(rb.task);
  FoundationModel model_b = base.clone();
  Rng rng(Rng::mix(901, 0x9ef7));
  std::vector<AttachPoint> sites;
  for (const PeftModule& m : a.peft.modules) sites.push_back(m.attach);
  PeftSet peft_b = attach_at(model_b, sites, rb.peft, rng);
  BatchStream stream(data_b.train, rb.train.batch_size, 902);
  finetune(model_b, peft_b, stream, rb.train, 180, rb.train.lr_finetune);
  const double acc_b = evaluate(model_b, &peft_b, data_b.eval);

  PruningPlan plan_b = a.report.plan;
  plan_b.kept_modules.clear();
  plan_b.kept_ranks.clear();
  for (std::size_t i = 0; i < peft_b.modules.size(); ++i) {
    plan_b.kept_modules.push_back(i);
    plan_b.kept_ranks.push_back(peft_b.modules[i].active_ranks);
  }
  const Checkpoint ck_a = make_checkpoint(a.model, a.peft, a.report.plan, &a.masks);
  const Checkpoint ck_b = make_checkpoint(model_b, peft_b, plan_b, &a.masks);

  // Bit-exact round trips through the byte format.
  const std::string bytes_a = encode_checkpoint(ck_a);
  const std::string bytes_b = encode_checkpoint(ck_b);
  const bool roundtrip = encode_checkpoint(decode_checkpoint(bytes_a)) == bytes_a &&
                         encode_checkpoint(decode_checkpoint(bytes_b)) == bytes_b &&
                         encode_foundation(decode_foundation(encode_foundation(base))) == encode_foundation(base);

  const std::vector<double> logits_a = predict_logits(a.model, &a.peft, a.data.eval);
  const std::vector<double> logits_b = predict_logits(model_b, &peft_b, data_b.eval);
  const FoundationModel shared = decode_foundation(encode_foundation(base));
  bool identical = true, restored = true;
  for (int round = 0; round < 2; ++round) {
    TaskModel ta = swap_adapter(shared, decode_checkpoint(bytes_a));
    TaskModel tb = swap_adapter(shared, decode_checkpoint(bytes_b));
    identical = identical && predict_logits(ta.model, &ta.peft, a.data.eval) == logits_a &&
                predict_logits(tb.model, &tb.peft, data_b.eval) == logits_b;
    restored = restored && evaluate(ta.model, &ta.peft, a.data.eval) == a.report.accuracy &&
               evaluate(tb.model, &tb.peft, data_b.eval) == acc_b;
  }
  const bool pass = roundtrip && identical && restored;
  return {pass, std::string(roundtrip ? "round trip bit-exact" : "round trip differs") + ", A->B->A->B swaps " +
                    (identical ? "logit-identical" : "changed logits") + fmt(", accuracies %.3f / %.3f", a.report.accuracy, acc_b) +
                    (restored ? " restored" : " not restored")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"mask/structural equivalence", mask_equivalence},
      {"zero-delta init", zero_delta_init},
      {"selection arithmetic", selection_arithmetic},
      {"Taylor-oracle equivalence", taylor_oracle},
      {"end-to-end quality retention", quality_retention},
      {"efficiency direction", efficiency_direction},
      {"sweep shapes", sweep_shapes},
      {"persistence and plug-and-play", persistence_and_swap},
  };
  std::set<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoul(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!wanted.empty() && !wanted.count(i + 1)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << out.detail << fmt(" [%.1fs]", secs) << std::endl;
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
