#include <doctest.h>

#include "support.hpp"
#include "vlmtta/episodic.hpp"
#include "vlmtta/online.hpp"
#include "vlmtta/scoring.hpp"

using namespace vlmtta;
using namespace vlmtta::testing;

namespace {

const EmbeddingBundle& stream_bundle() {
  static const EmbeddingBundle b = generate_synthetic(small_spec(31, 6, 16, 80, 10));
  return b;
}

std::vector<Prediction> run_stream(const std::string& tag, const EmbeddingBundle& b,
                                   const OnlineConfig& cfg) {
  OnlineState state = init_online_state(tag, b.text_features[0], cfg);
  std::vector<Prediction> out;
  for (std::size_t i : b.stream_sequence())
    out.push_back(online_step(tag, state, b.samples[i], b.text_features[0], b.scoring, cfg));
  return out;
}

CacheEntry entry(std::size_t label, double h) {
  return {Vec::Zero(2), h, label, Vec::Zero(2)};
}

}  // namespace

TEST_SUITE("online") {

TEST_CASE("entropy cache keeps the lowest-entropy entries per class") {
  EntropyCache c(2, 2);
  CHECK(c.offer(entry(0, 0.5)));
  CHECK(c.offer(entry(0, 0.9)));
  CHECK(c.offer(entry(1, 0.7)));
  CHECK(c.size() == 3);
  CHECK(c.offer(entry(0, 0.3)));  // evicts 0.9
  CHECK_FALSE(c.offer(entry(0, 0.6)));
  CHECK_FALSE(c.offer(entry(0, 0.5)));  // ties do not replace
  std::vector<double> kept;
  for (const auto& e : c.buckets()[0]) kept.push_back(e.entropy);
  std::sort(kept.begin(), kept.end());
  CHECK(kept == std::vector<double>{0.3, 0.5});
  EntropyCache none(2, 0);
  CHECK_FALSE(none.offer(entry(1, 0.1)));
}

TEST_CASE("cache eviction matches a keep-the-k-smallest oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cap = 1 + rng.below(4);
    EntropyCache c(3, cap);
    std::vector<std::vector<double>> offered(3);
    for (int i = 0; i < 30; ++i) {
      const std::size_t k = rng.below(3);
      const double h = rng.uniform();
      c.offer(entry(k, h));
      offered[k].push_back(h);
    }
    for (std::size_t k = 0; k < 3; ++k) {
      std::sort(offered[k].begin(), offered[k].end());
      offered[k].resize(std::min(cap, offered[k].size()));
      std::vector<double> kept;
      for (const auto& e : c.buckets()[k]) kept.push_back(e.entropy);
      std::sort(kept.begin(), kept.end());
      CHECK(kept == offered[k]);
    }
  }
}

TEST_CASE("zeroed online configs reproduce zero-shot exactly") {
  const EmbeddingBundle& b = stream_bundle();
  std::map<std::string, OnlineConfig> zeroed;
  for (const std::string& tag : online_method_tags()) zeroed[tag] = default_online_config(tag);
  zeroed["tda"].tda.pos_alpha = 0.0;
  zeroed["tda"].tda.neg_beta = 0.0;
  zeroed["dmn"].dmn.alpha = 0.0;
  zeroed["dmn_w"].dmn.alpha = 0.0;
  zeroed["onzeta"].onzeta.temper = 0.0;
  zeroed["onzeta"].onzeta.mix = 0.0;
  zeroed["boostadapter"].boostadapter.alpha = 0.0;
  zeroed["dpe"].dpe.mix = 0.0;
  zeroed["dpe"].dpe.residual_steps = 0;
  zeroed["ecalp"].ecalp.alpha = 0.0;
  zeroed["dynaprompt"].dynaprompt.learning_rate = 0.0;
  for (const auto& [tag, cfg] : zeroed) {
    const auto preds = run_stream(tag, b, cfg);
    const auto seq = b.stream_sequence();
    for (std::size_t t = 0; t < seq.size(); ++t) {
      CAPTURE(tag);
      CAPTURE(t);
      CHECK(identical(preds[t], zero_shot_predict(b.samples[seq[t]], b.text_features[0], b.scoring)));
    }
  }
}

TEST_CASE("state invariants hold along long random streams") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthSpec spec = small_spec(seed, 5, 12, 200, 8);
    spec.adversarial_fraction = 0.1;
    const EmbeddingBundle b = generate_synthetic(spec);
    for (const std::string& tag : online_method_tags()) {
      OnlineConfig cfg = default_online_config(tag);
      cfg.dmn.memory_capacity = 17;
      cfg.ecalp.window = 9;
      cfg.dynaprompt.capacity = 4;
      OnlineState state = init_online_state(tag, b.text_features[0], cfg);
      std::uint64_t expected = 0;
      for (std::size_t i : b.stream_sequence()) {
        online_step(tag, state, b.samples[i], b.text_features[0], b.scoring, cfg);
        CHECK(step_counter(state) == ++expected);
        CHECK_NOTHROW(check_state_invariants(state, cfg));
      }
    }
  }
}

TEST_CASE("invariant checker catches a corrupted state") {
  const EmbeddingBundle& b = stream_bundle();
  OnlineConfig cfg = default_online_config("onzeta");
  OnlineState s = init_online_state("onzeta", b.text_features[0], cfg);
  std::get<OnzetaState>(s).label_distribution(0) += 0.1;
  CHECK_THROWS_AS(check_state_invariants(s, cfg), std::logic_error);
  OnlineState d = init_online_state("dmn", b.text_features[0], cfg);
  cfg.dmn.memory_capacity = 0;
  std::get<DmnState>(d).memory.push_back({Vec::Zero(2), Vec::Zero(2)});
  CHECK_THROWS_AS(check_state_invariants(d, cfg), std::logic_error);
}

TEST_CASE("a state is rejected by another method") {
  const EmbeddingBundle& b = stream_bundle();
  const OnlineConfig cfg;
  OnlineState s = init_online_state("tda", b.text_features[0], cfg);
  CHECK_THROWS_AS(online_step("dpe", s, b.samples[0], b.text_features[0], b.scoring, cfg),
                  ValidationError);
  CHECK_THROWS_AS(init_online_state("tpt", b.text_features[0], cfg), ValidationError);
}

TEST_CASE("snapshot and resume reproduce an uninterrupted stream") {
  const EmbeddingBundle& b = stream_bundle();
  const auto seq = b.stream_sequence();
  for (const std::string& tag : online_method_tags()) {
    CAPTURE(tag);
    const OnlineConfig cfg = default_online_config(tag);
    const auto full = run_stream(tag, b, cfg);
    OnlineState state = init_online_state(tag, b.text_features[0], cfg);
    const std::size_t cut = seq.size() / 2;
    for (std::size_t t = 0; t < cut; ++t)
      online_step(tag, state, b.samples[seq[t]], b.text_features[0], b.scoring, cfg);
    TempDir dir("snapshot");
    save_online_state(tag, state, dir.path());
    auto [loaded_tag, resumed] = load_online_state(dir.path());
    CHECK(loaded_tag == tag);
    CHECK(step_counter(resumed) == cut);
    for (std::size_t t = cut; t < seq.size(); ++t)
      CHECK(identical(online_step(tag, resumed, b.samples[seq[t]], b.text_features[0], b.scoring, cfg),
                      full[t]));
  }
}

TEST_CASE("online predictions depend on stream order") {
  EmbeddingBundle b = stream_bundle();
  const auto forward = run_stream("dmn", b, default_online_config("dmn"));
  const auto n = static_cast<std::uint32_t>(b.samples.size());
  for (SampleRecord& s : b.samples) s.stream_position = n - 1 - s.stream_position;
  const auto backward = run_stream("dmn", b, default_online_config("dmn"));
  const auto seq = b.stream_sequence();
  std::size_t differ = 0;
  for (std::size_t t = 0; t < seq.size(); ++t)
    differ += !identical(backward[t], forward[seq.size() - 1 - t]);
  CHECK(differ > 0);
}

TEST_CASE("dmn readout matches a scalar oracle") {
  Rng rng(12);
  std::deque<MemoryItem> memory;
  const Mat feats = random_unit_rows(rng, 7, 5);
  for (Eigen::Index i = 0; i < 7; ++i) {
    Vec p(3);
    p << rng.uniform(), rng.uniform(), 0.0;  // class 2 never receives mass
    memory.push_back({feats.row(i).transpose(), p / p.sum()});
  }
  const Mat w = dmn_readout(memory, 3, 5);
  for (Eigen::Index k = 0; k < 3; ++k) {
    std::vector<double> acc(5, 0.0);
    for (const auto& m : memory)
      for (Eigen::Index d = 0; d < 5; ++d) acc[static_cast<std::size_t>(d)] += m.probs(k) * m.feature(d);
    double n2 = 0.0;
    for (double a : acc) n2 += a * a;
    for (Eigen::Index d = 0; d < 5; ++d) {
      const double expect = n2 > 0.0 ? acc[static_cast<std::size_t>(d)] / std::sqrt(n2) : 0.0;
      CHECK(std::abs(w(k, d) - expect) <= 1e-9);
    }
  }
}

TEST_CASE("dmn with memory adds the scaled readout similarity to the logits") {
  const EmbeddingBundle& b = stream_bundle();
  DmnConfig cfg;
  cfg.use_aug = false;
  DmnState state;
  const auto seq = b.stream_sequence();
  for (std::size_t t = 0; t < 5; ++t) dmn_step(state, b.samples[seq[t]], b.text_features[0], b.scoring, cfg);
  const SampleRecord& s = b.samples[seq[5]];
  const Mat w = dmn_readout(state.memory, b.num_classes(), b.dim);
  Vec z(b.num_classes());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    double c = 0.0, r = 0.0;
    for (Eigen::Index d = 0; d < b.dim; ++d) {
      c += s.views(0, d) * b.text_features[0](k, d);
      r += s.views(0, d) * w(k, d);
    }
    z(k) = b.scoring.scale * (c + cfg.alpha * r);
  }
  const Vec expect = (z.array() - z.maxCoeff()).exp().matrix();
  const Prediction p = dmn_step(state, s, b.text_features[0], b.scoring, cfg);
  for (Eigen::Index k = 0; k < z.size(); ++k)
    CHECK((*p.probs)(k) == doctest::Approx(expect(k) / expect.sum()).epsilon(1e-10));
}

TEST_CASE("label propagation converges to the dense fixed point") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat nodes = random_unit_rows(rng, 12, 6);
    const Mat S = ecalp_affinity(nodes, Vec::Ones(6), 3.0, trial % 2 ? 4 : 0);
    Mat Y = Mat::Zero(12, 3);
    for (Eigen::Index i = 0; i < 12; ++i) Y(i, static_cast<Eigen::Index>(rng.below(3))) = 1.0;
    const Mat iterated = ecalp_propagate(S, Y, 0.5, 100);
    const Mat dense = dense_propagation(S, Y, 0.5);
    CHECK((iterated - dense).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("ecalp affinity is symmetric with an empty diagonal") {
  Rng rng(14);
  const Mat nodes = random_unit_rows(rng, 10, 5);
  const Mat S = ecalp_affinity(nodes, ecalp_dimension_weights(random_unit_rows(rng, 4, 5)), 3.0, 3);
  for (Eigen::Index i = 0; i < 10; ++i) {
    CHECK(S(i, i) == 0.0);
    for (Eigen::Index j = 0; j < 10; ++j) CHECK(S(i, j) == doctest::Approx(S(j, i)).epsilon(1e-14));
  }
  const Vec w = ecalp_dimension_weights(Mat::Ones(3, 4));
  CHECK(w == Vec::Ones(4));
}

TEST_CASE("dpe gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const Eigen::Index C = 3 + static_cast<Eigen::Index>(rng.below(3));
    const Eigen::Index D = 5 + static_cast<Eigen::Index>(rng.below(5));
    const Mat T = random_unit_rows(rng, C, D);
    const Mat P = random_unit_rows(rng, C, D);
    const Vec x = random_unit_rows(rng, 1, D).row(0).transpose();
    Mat rt(C, D), rv(C, D);
    for (Eigen::Index i = 0; i < rt.size(); ++i) {
      rt.data()[i] = 0.05 * rng.normal();
      rv.data()[i] = 0.05 * rng.normal();
    }
    const bool sig = seed % 2 == 1;
    const ScoringRule rule = sig ? ScoringRule{ScoreKind::sigmoid, 6.0, -1.0}
                                 : ScoringRule{ScoreKind::softmax, 6.0, 0.0};
    DpeConfig cfg;
    cfg.mix = 0.7;
    cfg.align_weight = 0.4;
    const std::size_t anchor = rng.below(static_cast<std::uint64_t>(C));
    const auto f = [&](const Mat& dt, const Mat& dv) {
      return oracle_dpe_loss(x, T, P, dt, dv, rule.scale, sig, rule.bias, cfg.mix, cfg.align_weight,
                             anchor);
    };
    const DpeLossGrad lg = dpe_loss_and_grad(x, T, P, {rt}, {rv}, rule, cfg, anchor);
    CHECK(lg.loss == doctest::Approx(f(rt, rv)).epsilon(1e-10));
    const GradCheck gt = compare_gradients(
        lg.grad_text, central_differences([&](const Mat& d) { return f(d, rv); }, rt), 1e-3);
    const GradCheck gv = compare_gradients(
        lg.grad_vision, central_differences([&](const Mat& d) { return f(rt, d); }, rv), 1e-3);
    CAPTURE(gt.worst);
    CAPTURE(gv.worst);
    CHECK(gt.ok);
    CHECK(gv.ok);
  }
}

TEST_CASE("dynaprompt selection uses the buffer medians") {
  CHECK(dynaprompt_select({0.1, 0.5, 0.3}, {0.9, 0.2, 0.5}) == std::vector<std::size_t>{0, 2});
  CHECK(dynaprompt_select({0.2}, {0.4}) == std::vector<std::size_t>{0});
  // Entropy median 0.35, margin median 0.5: index 0 is confident but its margin is low.
  CHECK(dynaprompt_select({0.1, 0.6, 0.3, 0.4}, {0.3, 0.8, 0.7, 0.1}) == std::vector<std::size_t>{2});
  CHECK(dynaprompt_select({0.1, 0.6}, {0.2, 0.8}).empty());
}

TEST_CASE("dynaprompt buffer stays within capacity") {
  const EmbeddingBundle& b = stream_bundle();
  DynaPromptConfig cfg;
  cfg.capacity = 3;
  DynaPromptState s = dynaprompt_init(b.text_features[0]);
  CHECK(s.shifts.size() == 1);
  for (std::size_t i : b.stream_sequence()) {
    dynaprompt_step(s, b.samples[i], b.text_features[0], b.scoring, cfg);
    CHECK(s.shifts.size() >= 1);
    CHECK(s.shifts.size() <= 3);
  }
}

TEST_CASE("boosting entries come from the confident augmented views and are not stored") {
  const EmbeddingBundle& b = stream_bundle();
  const auto entries = boosting_entries(b.samples[0], b.text_features[0], b.scoring, 0.25);
  CHECK(entries.size() == 2);  // floor(0.25 * 9)
  BoostAdapterConfig cfg;
  BoostAdapterState s = boostadapter_init(static_cast<std::size_t>(b.num_classes()), cfg);
  boostadapter_step(s, b.samples[0], b.text_features[0], b.scoring, cfg);
  CHECK(s.historical.size() == 1);
}

TEST_CASE("tda caches respect their capacities") {
  const EmbeddingBundle& b = stream_bundle();
  TdaConfig cfg;
  TdaState s = tda_init(static_cast<std::size_t>(b.num_classes()), cfg);
  for (std::size_t i : b.stream_sequence()) {
    tda_step(s, b.samples[i], b.text_features[0], b.scoring, cfg);
    for (const auto& bucket : s.positive.buckets()) CHECK(bucket.size() <= cfg.pos_capacity);
    for (const auto& bucket : s.negative.buckets()) CHECK(bucket.size() <= cfg.neg_capacity);
  }
  CHECK(s.positive.size() > 0);
}

TEST_CASE("online config validation") {
  OnlineConfig cfg;
  cfg.ecalp.alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.onzeta.mix = 2.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.dynaprompt.capacity = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

}  // TEST_SUITE

TEST_SUITE("online") {

TEST_CASE("first prediction of an empty cache or memory is zero-shot") {
  const EmbeddingBundle& b = stream_bundle();
  const SampleRecord& s = b.samples[b.stream_sequence()[0]];
  const Prediction zs = zero_shot_predict(s, b.text_features[0], b.scoring);
  for (const std::string tag : {"tda", "dmn", "dmn_w"}) {
    const OnlineConfig cfg = default_online_config(tag);
    OnlineState state = init_online_state(tag, b.text_features[0], cfg);
    CHECK(identical(online_step(tag, state, s, b.text_features[0], b.scoring, cfg), zs));
  }
}

TEST_CASE("positive cache of capacity one keeps the lower-entropy sample") {
  const EmbeddingBundle& b = stream_bundle();
  TdaConfig cfg;
  cfg.pos_capacity = 1;
  TdaState state = tda_init(static_cast<std::size_t>(b.num_classes()), cfg);
  // Two samples predicted as the same class: the sharper one must survive.
  const Mat& bank = b.text_features[0];
  SampleRecord sharp = b.samples[0], blurry = b.samples[0];
  sharp.views.row(0) = bank.row(2);
  const Vec mix = l2_normalize((0.6 * bank.row(2) + 0.4 * bank.row(3)).transpose());
  blurry.views.row(0) = mix.transpose();
  tda_step(state, blurry, bank, b.scoring, cfg);
  tda_step(state, sharp, bank, b.scoring, cfg);
  REQUIRE(state.positive.buckets()[2].size() == 1);
  CHECK(state.positive.buckets()[2][0].feature == Vec(bank.row(2).transpose()));
}

TEST_CASE("dmn memory of one one-hot sample reads out that feature") {
  Rng rng(41);
  const Vec f = random_unit_rows(rng, 1, 6).row(0).transpose();
  Vec p = Vec::Zero(4);
  p(1) = 1.0;
  const Mat w = dmn_readout({{f, p}}, 4, 6);
  CHECK((w.row(1).transpose() - f).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(w.row(0).isZero(0.0));
}

TEST_CASE("onzeta with full label rate adopts the sample distribution") {
  const EmbeddingBundle& b = stream_bundle();
  OnzetaConfig cfg;
  cfg.label_lr = 1.0;
  OnzetaState s = onzeta_init(b.text_features[0]);
  const SampleRecord& x = b.samples[0];
  onzeta_step(s, x, b.text_features[0], b.scoring, cfg);
  const Vec p = score(x.views.row(0).transpose(), b.text_features[0], b.scoring).probs;
  CHECK((s.label_distribution - p).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("boostadapter without boosting equals tda's positive cache") {
  const EmbeddingBundle& b = stream_bundle();
  OnlineConfig cfg;
  cfg.boostadapter.boosting = false;
  cfg.tda.pos_capacity = cfg.boostadapter.capacity;
  cfg.tda.pos_alpha = cfg.boostadapter.alpha;
  cfg.tda.pos_gamma = cfg.boostadapter.gamma;
  cfg.tda.neg_beta = 0.0;
  const auto boost = run_stream("boostadapter", b, cfg);
  const auto tda = run_stream("tda", b, cfg);
  for (std::size_t t = 0; t < boost.size(); ++t) CHECK(identical(boost[t], tda[t]));
}

TEST_CASE("boostadapter state does not depend on the number of views") {
  const EmbeddingBundle& b = stream_bundle();
  BoostAdapterConfig cfg;
  BoostAdapterState many = boostadapter_init(static_cast<std::size_t>(b.num_classes()), cfg);
  BoostAdapterState few = many;
  for (std::size_t i : b.stream_sequence()) {
    SampleRecord s = b.samples[i];
    boostadapter_step(many, s, b.text_features[0], b.scoring, cfg);
    s.views = s.views.topRows(2).eval();
    boostadapter_step(few, s, b.text_features[0], b.scoring, cfg);
  }
  for (std::size_t k = 0; k < many.historical.buckets().size(); ++k) {
    REQUIRE(many.historical.buckets()[k].size() == few.historical.buckets()[k].size());
    for (std::size_t j = 0; j < many.historical.buckets()[k].size(); ++j)
      CHECK(many.historical.buckets()[k][j].feature == few.historical.buckets()[k][j].feature);
  }
}

TEST_CASE("dpe prototypes stay put when the update threshold is unreachable") {
  const EmbeddingBundle& b = stream_bundle();
  DpeConfig cfg;
  cfg.update_threshold = 1.1;
  DpeState s = dpe_init(b.text_features[0]);
  const Mat start = s.vision_protos;
  for (std::size_t i : b.stream_sequence()) dpe_step(s, b.samples[i], b.text_features[0], b.scoring, cfg);
  CHECK(s.vision_protos == start);
  CHECK((start - b.text_features[0]).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(s.text_protos == b.text_features[0]);
}

TEST_CASE("zero propagation iterations return the seeds") {
  Rng rng(42);
  const Mat nodes = random_unit_rows(rng, 7, 4);
  const Mat S = ecalp_affinity(nodes, Vec::Ones(4), 3.0, 0);
  Mat Y = random_unit_rows(rng, 7, 3).cwiseAbs();
  CHECK(ecalp_propagate(S, Y, 0.5, 0) == Y);
}

TEST_CASE("three-class graph with a window of four matches the dense solve") {
  Rng rng(43);
  const Mat bank = random_unit_rows(rng, 3, 6);
  EcalpState state;
  EcalpConfig cfg;
  cfg.window = 4;
  cfg.iterations = 200;
  cfg.knn = 0;
  const ScoringRule rule{ScoreKind::softmax, 10.0, 0.0};
  std::vector<SampleRecord> stream;
  for (int i = 0; i < 5; ++i) {
    SampleRecord s;
    s.id = sample_id(static_cast<std::size_t>(i));
    s.views = random_unit_rows(rng, 1, 6);
    stream.push_back(s);
  }
  for (int i = 0; i < 4; ++i) ecalp_step(state, stream[static_cast<std::size_t>(i)], bank, rule, cfg);
  REQUIRE(state.window.size() == 4);
  Mat nodes(8, 6), Y = Mat::Zero(8, 3);
  nodes.topRows(3) = bank;
  for (int k = 0; k < 3; ++k) Y(k, k) = 1.0;
  for (int w = 0; w < 4; ++w) {
    nodes.row(3 + w) = state.window[static_cast<std::size_t>(w)].feature.transpose();
    Y.row(3 + w) = state.window[static_cast<std::size_t>(w)].probs.transpose();
  }
  nodes.row(7) = stream[4].views.row(0);
  Y.row(7) = score(stream[4].views.row(0).transpose(), bank, rule).probs.transpose();
  const Mat S = ecalp_affinity(nodes, ecalp_dimension_weights(bank), cfg.gamma, 0);
  const Vec expect = dense_propagation(S, Y, cfg.alpha).row(7).transpose();
  const Prediction p = ecalp_step(state, stream[4], bank, rule, cfg);
  CHECK((*p.probs - expect / expect.sum()).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("dynaprompt with one slot behaves as a persistent single shift") {
  const EmbeddingBundle& b = stream_bundle();
  DynaPromptConfig cfg;
  cfg.capacity = 1;
  DynaPromptState s = dynaprompt_init(b.text_features[0]);
  for (std::size_t i : b.stream_sequence()) {
    dynaprompt_step(s, b.samples[i], b.text_features[0], b.scoring, cfg);
    CHECK(s.shifts.size() == 1);
  }
  CHECK_FALSE(s.shifts[0].is_zero());
}

TEST_CASE("online replay from a fresh state is bit-identical") {
  const EmbeddingBundle& b = stream_bundle();
  for (const std::string& tag : online_method_tags()) {
    const OnlineConfig cfg = default_online_config(tag);
    const auto a = run_stream(tag, b, cfg);
    const auto c = run_stream(tag, b, cfg);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(identical(a[t], c[t]));
  }
}

}  // TEST_SUITE
