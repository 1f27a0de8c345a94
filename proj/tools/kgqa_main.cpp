// Command-line driver: gen / train-kge / eval-linkpred / occlude / train-qa /
// eval-qa / answer / bench / sweep-lambda / compare-sampling.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "kgqa/composite.hpp"
#include "kgqa/config.hpp"
#include "kgqa/kg.hpp"
#include "kgqa/kge.hpp"
#include "kgqa/linkpred.hpp"
#include "kgqa/model.hpp"
#include "kgqa/pipeline.hpp"
#include "kgqa/qa.hpp"
#include "kgqa/synth.hpp"
#include "kgqa/text.hpp"

namespace fs = std::filesystem;
using namespace kgqa;

namespace {

SynthPaths synth_paths(const std::string& dir) {
  return {dir + "/kg.tsv", dir + "/vectors.txt", dir + "/images.tsv", dir + "/qa.tsv"};
}

// Shared experiment flags; --config resolves any of them from a flat
// key=value file, with explicit flags taking precedence.
void add_path_options(CLI::App* cmd, ExperimentConfig* cfg) {
  cmd->add_option("--kg", cfg->kg_path, "knowledge graph TSV");
  cmd->add_option("--vectors", cfg->vectors_path, "word vector file");
  cmd->add_option("--images", cfg->images_path, "image concepts TSV");
  cmd->add_option("--qa", cfg->qa_path, "QA instances TSV");
  cmd->add_option("--ckpt", cfg->kge_checkpoint, "embedding checkpoint path");
  cmd->add_option("--qa-ckpt", cfg->qa_checkpoint, "QA checkpoint path");
  cmd->add_option("--results", cfg->results_csv, "results CSV to append to");
  cmd->set_config("--config", "", "flat key=value config file; flags override");
}

void add_kge_options(CLI::App* cmd, ExperimentConfig* cfg, std::string* kind,
                     std::string* sampling) {
  cmd->add_option("--model", *kind, "transe | rotate | ermlp");
  cmd->add_option("--dim", cfg->kge.dim, "embedding dimension N_e");
  cmd->add_option("--steps", cfg->kge.steps, "training steps");
  cmd->add_option("--batch", cfg->kge.batch_size, "batch size");
  cmd->add_option("--lr", cfg->kge.learning_rate, "learning rate");
  cmd->add_option("--lr-decay-every", cfg->kge.lr_decay_every, "steps per lr decay");
  cmd->add_option("--lr-decay", cfg->kge.lr_decay, "lr decay factor");
  cmd->add_option("--alpha", cfg->kge.alpha, "adversarial temperature");
  cmd->add_option("--negatives", cfg->kge.negatives, "negatives per positive");
  cmd->add_option("--sampling", *sampling, "adversarial | uniform");
  cmd->add_option("--gamma", cfg->kge.gamma, "distance-to-score margin");
  cmd->add_option("--train-fraction", cfg->kg_train_fraction, "KG train fraction");
  cmd->add_option("--split-seed", cfg->kg_split_seed, "KG split seed");
  cmd->add_option("--seed", cfg->kge.seed, "training seed");
  cmd->add_option("--loss-csv", cfg->loss_csv, "loss trajectory CSV");
  cmd->add_flag("--grad-through-weights", cfg->kge.grad_through_weights,
                "backprop through adversarial weights (ablation)");
}

void resolve_enums(ExperimentConfig* cfg, const std::string& kind, const std::string& sampling) {
  if (!kind.empty()) {
    cfg->kind = model_kind_from_string(kind);
  }
  if (!sampling.empty()) {
    cfg->kge.sampling = sampling_from_string(sampling);
  }
}

void add_qa_options(CLI::App* cmd, ExperimentConfig* cfg) {
  cmd->add_option("--state-dim", cfg->qa.state_dim, "encoder state dimension");
  cmd->add_option("--hidden", cfg->qa.hidden_dim, "fusion hidden width (0 = 2*N_e)");
  cmd->add_option("--epochs", cfg->qa.epochs, "training epochs");
  cmd->add_option("--qa-batch", cfg->qa.batch_size, "batch size");
  cmd->add_option("--qa-lr", cfg->qa.learning_rate, "learning rate");
  cmd->add_option("--decay-every", cfg->qa.decay_every, "epochs per lr decay");
  cmd->add_option("--decay", cfg->qa.decay, "lr decay factor");
  cmd->add_option("--weight-decay", cfg->qa.weight_decay, "head weight decay");
  cmd->add_option("--dropout", cfg->qa.dropout, "fusion hidden dropout");
  cmd->add_option("--gate-epochs", cfg->qa.gate_epochs, "gate training epochs");
  cmd->add_option("--gate-lr", cfg->qa.gate_learning_rate, "gate learning rate");
  cmd->add_option("--qa-seed", cfg->qa.seed, "QA training seed");
  cmd->add_option("--qa-train-fraction", cfg->qa_train_fraction, "QA train fraction");
  cmd->add_option("--qa-split-seed", cfg->qa_split_seed, "QA split seed");
  cmd->add_option("--splits", cfg->splits, "number of seeded train/test splits");
}

void add_lambda_options(CLI::App* cmd, ExperimentConfig* cfg) {
  cmd->add_option("--lambda1", cfg->lambda.l1, "KG similarity weight");
  cmd->add_option("--lambda2", cfg->lambda.l2, "Jaccard weight");
  cmd->add_option("--lambda3", cfg->lambda.l3, "word-vector similarity weight");
  cmd->add_option("--top-k", cfg->top_k, "fact pruning cutoff (100 or 500)");
  cmd->add_flag("--raw-kg-score", cfg->raw_kg_score, "skip min-max normalization of K");
}

std::vector<Index> parse_counts(const std::string& csv) {
  std::vector<Index> counts;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t pos = csv.find(',', start);
    const std::string part =
        csv.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (!part.empty()) {
      counts.push_back(std::stoll(part));
    }
    if (pos == std::string::npos) {
      break;
    }
    start = pos + 1;
  }
  return counts;
}

struct LoadedQaContext {
  KnowledgeGraph kg;
  ScoringModel model;
  WordVectorTable words;
  QaDataset data;
};

LoadedQaContext load_qa_context(const ExperimentConfig& cfg) {
  LoadedQaContext ctx;
  ctx.kg = load_kg(cfg.kg_path);
  ctx.model = load_checkpoint(cfg.kge_checkpoint);
  ctx.words = load_vectors(cfg.vectors_path);
  ctx.data = load_qa_dataset(cfg.images_path, cfg.qa_path, ctx.kg);
  return ctx;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"knowledge-graph-embedding question answering engine"};
  app.require_subcommand(1);

  // ---- gen ----
  auto gen_dir = std::make_shared<std::string>(".");
  auto synth = std::make_shared<SynthConfig>();
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--out-dir", *gen_dir, "output directory");
  gen->add_option("--entities", synth->n_entities, "entity count");
  gen->add_option("--relations", synth->n_relations, "relation count");
  gen->add_option("--edges", synth->n_edges, "edge count");
  gen->add_option("--images", synth->n_images, "image count");
  gen->add_option("--max-concepts", synth->max_concepts_per_image, "concepts per image cap");
  gen->add_option("--questions", synth->n_questions, "question count");
  gen->add_option("--image-answer-fraction", synth->image_answer_fraction,
                  "fraction with an in-image answer");
  gen->add_option("--planted-dim", synth->planted_dim, "latent space dimension");
  gen->add_option("--seed", synth->seed, "generator seed");
  gen->set_config("--config", "", "flat key=value config file; flags override");
  gen->callback([gen_dir, synth] {
    fs::create_directories(*gen_dir);
    const SynthPaths paths = synth_paths(*gen_dir);
    generate_synthetic(*synth, paths);
    const ConsistencyReport report = check_consistency(paths);
    std::cout << "generated " << report.n_edges << " edges, " << report.n_images << " images, "
              << report.n_questions << " questions (" << report.n_image_source
              << " image-source) in " << *gen_dir << '\n';
    if (!report.ok) {
      for (const auto& p : report.problems) {
        std::cerr << "consistency: " << p << '\n';
      }
      throw DataError("generated corpus failed its consistency check");
    }
  });

  // ---- train-kge ----
  auto tk_cfg = std::make_shared<ExperimentConfig>();
  auto tk_kind = std::make_shared<std::string>();
  auto tk_sampling = std::make_shared<std::string>();
  CLI::App* tk = app.add_subcommand("train-kge", "train knowledge graph embeddings");
  add_path_options(tk, tk_cfg.get());
  add_kge_options(tk, tk_cfg.get(), tk_kind.get(), tk_sampling.get());
  tk->callback([tk_cfg, tk_kind, tk_sampling] {
    resolve_enums(tk_cfg.get(), *tk_kind, *tk_sampling);
    run_pipeline(*tk_cfg, {Stage::Kge});
    std::cout << "checkpoint written to " << tk_cfg->kge_checkpoint << '\n';
  });

  // ---- eval-linkpred ----
  auto el_cfg = std::make_shared<ExperimentConfig>();
  auto el_kind = std::make_shared<std::string>();
  auto el_sampling = std::make_shared<std::string>();
  auto el_filtered = std::make_shared<bool>(false);
  CLI::App* el = app.add_subcommand("eval-linkpred", "rank held-out edges (MR/MRR/Hits@k)");
  add_path_options(el, el_cfg.get());
  add_kge_options(el, el_cfg.get(), el_kind.get(), el_sampling.get());
  el->add_flag("--filtered", *el_filtered, "filter competing true edges from candidates");
  el->callback([el_cfg, el_kind, el_sampling, el_filtered] {
    resolve_enums(el_cfg.get(), *el_kind, *el_sampling);
    el_cfg->filtered_eval = *el_filtered;
    run_pipeline(*el_cfg, {Stage::Linkpred});
  });

  // ---- occlude ----
  auto oc_kg = std::make_shared<std::string>();
  auto oc_out = std::make_shared<std::string>("occluded.tsv");
  auto oc_mode = std::make_shared<std::string>("fraction");
  auto oc_fraction = std::make_shared<double>(0.5);
  auto oc_seed = std::make_shared<std::uint64_t>(0);
  auto oc_facts = std::make_shared<std::string>();
  CLI::App* oc = app.add_subcommand("occlude", "remove edges for incomplete-KG runs");
  oc->add_option("--kg", *oc_kg, "knowledge graph TSV")->required();
  oc->add_option("--out", *oc_out, "occluded graph output path");
  oc->add_option("--mode", *oc_mode, "fraction | qa-facts");
  oc->add_option("--fraction", *oc_fraction, "fraction of edges to drop");
  oc->add_option("--seed", *oc_seed, "selection seed");
  oc->add_option("--qa-facts", *oc_facts, "TSV of facts to drop (qa-facts mode)");
  oc->set_config("--config", "", "flat key=value config file; flags override");
  oc->callback([oc_kg, oc_out, oc_mode, oc_fraction, oc_seed, oc_facts] {
    KnowledgeGraph kg = load_kg(*oc_kg);
    OcclusionSpec spec;
    spec.seed = *oc_seed;
    KnowledgeGraph occluded;
    if (*oc_mode == "fraction") {
      spec.mode = OcclusionSpec::Mode::Fraction;
      spec.fraction = *oc_fraction;
      occluded = occlude(kg, spec);
    } else if (*oc_mode == "qa-facts") {
      spec.mode = OcclusionSpec::Mode::QaFacts;
      if (oc_facts->empty()) {
        throw UsageError("occlude: --qa-facts file required in qa-facts mode");
      }
      KnowledgeGraph facts_kg = load_kg(*oc_facts);
      std::vector<Triple> facts;
      for (const Triple& t : facts_kg.edges) {
        auto h = kg.entities.find(facts_kg.entities.surface(t.head.v));
        auto r = kg.relations.find(facts_kg.relations.surface(t.rel.v));
        auto tl = kg.entities.find(facts_kg.entities.surface(t.tail.v));
        if (!h || !r || !tl) {
          throw DataError("occlude: fact references unknown vocabulary entry");
        }
        facts.push_back({EntityId(*h), RelationId(*r), EntityId(*tl)});
      }
      occluded = occlude(kg, spec, &facts);
    } else {
      throw UsageError("occlude: mode must be fraction or qa-facts");
    }
    save_kg(occluded, *oc_out);
    std::cout << "kept " << occluded.edges.size() << " of " << kg.edges.size() << " edges -> "
              << *oc_out << '\n';
  });

  // ---- train-qa ----
  auto tq_cfg = std::make_shared<ExperimentConfig>();
  CLI::App* tq = app.add_subcommand("train-qa", "train the retrieval network and gate");
  add_path_options(tq, tq_cfg.get());
  add_qa_options(tq, tq_cfg.get());
  tq->callback([tq_cfg] {
    tq_cfg->splits = 1;
    run_pipeline(*tq_cfg, {Stage::Qa});
    std::cout << "checkpoint written to " << tq_cfg->qa_checkpoint << '\n';
  });

  // ---- eval-qa ----
  auto eq_cfg = std::make_shared<ExperimentConfig>();
  auto eq_mode = std::make_shared<std::string>("standalone");
  auto eq_dump = std::make_shared<std::string>();
  CLI::App* eq = app.add_subcommand("eval-qa", "evaluate answer retrieval (Hits@1/Hits@3)");
  add_path_options(eq, eq_cfg.get());
  add_qa_options(eq, eq_cfg.get());
  add_lambda_options(eq, eq_cfg.get());
  eq->add_option("--mode", *eq_mode, "standalone | composite");
  eq->add_option("--dump-attention", *eq_dump, "write per-instance attention weights here");
  eq->callback([eq_cfg, eq_mode, eq_dump] {
    const Stage eval_stage = [&] {
      if (*eq_mode == "standalone") return Stage::Eval;
      if (*eq_mode == "composite") return Stage::Composite;
      throw UsageError("eval-qa: mode must be standalone or composite");
    }();
    if (!eq_dump->empty()) {
      // single-split direct evaluation with attention dumping
      LoadedQaContext ctx = load_qa_context(*eq_cfg);
      QaModel qa_model = load_qa_checkpoint(eq_cfg->qa_checkpoint);
      const SplitIndices split = split_instances(ctx.data.instances.size(),
                                                 eq_cfg->qa_train_fraction, eq_cfg->qa_split_seed);
      const QaMetrics m = evaluate_qa(
          ctx.data, split.test, qa_model, ctx.model.table, ctx.words, ctx.kg,
          eval_stage == Stage::Eval ? QaEvalMode::Standalone : QaEvalMode::Composite,
          eq_cfg->lambda, eq_cfg->top_k, *eq_dump);
      std::cout << qa_metrics_json(m) << '\n';
      return;
    }
    std::vector<Stage> stages;
    if (eq_cfg->splits > 1) {
      stages.push_back(Stage::Qa);  // splits mode retrains per split
    }
    stages.push_back(eval_stage);
    run_pipeline(*eq_cfg, stages);
  });

  // ---- answer ----
  auto an_cfg = std::make_shared<ExperimentConfig>();
  auto an_question = std::make_shared<std::string>();
  auto an_image = std::make_shared<std::string>();
  auto an_dump = std::make_shared<std::string>();
  auto an_composite = std::make_shared<bool>(false);
  CLI::App* an = app.add_subcommand("answer", "answer a single question about an image");
  add_path_options(an, an_cfg.get());
  add_lambda_options(an, an_cfg.get());
  an->add_option("--question", *an_question, "question text")->required();
  an->add_option("--image-id", *an_image, "image id from the image file")->required();
  an->add_option("--dump-attention", *an_dump, "write attention weights here");
  an->add_flag("--composite", *an_composite, "use the text-augmented composite score");
  an->callback([an_cfg, an_question, an_image, an_dump, an_composite] {
    KnowledgeGraph kg = load_kg(an_cfg->kg_path);
    ScoringModel model = load_checkpoint(an_cfg->kge_checkpoint);
    QaModel qa_model = load_qa_checkpoint(an_cfg->qa_checkpoint);
    WordVectorTable words = load_vectors(an_cfg->vectors_path);
    std::vector<ImageAsKnowledge> images = load_images(an_cfg->images_path, kg);
    const ImageAsKnowledge* image = nullptr;
    for (const auto& img : images) {
      if (img.image_id == *an_image) {
        image = &img;
      }
    }
    if (!image) {
      throw DataError("answer: unknown image id " + *an_image);
    }
    const TokenSet tokens = tokenize(*an_question);
    if (tokens.empty()) {
      throw DataError("answer: empty question");
    }
    EntityId predicted;
    Scalar gate_prob = 0.5;
    Vector alpha_q, alpha_i;
    if (*an_composite) {
      const auto facts = prune_facts(tokens, *image, kg, words, an_cfg->top_k);
      const CompositeResult res = composite_answer(tokens, *image, qa_model, model.table, kg,
                                                   facts, an_cfg->lambda, words,
                                                   an_cfg->raw_kg_score);
      predicted = res.answer;
      gate_prob = res.gate_prob;
    } else {
      const AnswerResult res = answer(tokens, *image, qa_model, model.table, words);
      predicted = res.entity;
      gate_prob = res.gate_prob;
      alpha_q = res.alpha_q;
      alpha_i = res.alpha_i;
    }
    std::cout << kg.entities.surface(predicted.v) << '\n';
    std::cerr << "gate=" << gate_prob << " head=" << (gate_prob >= 0.5 ? "kvc" : "kb") << '\n';
    if (!an_dump->empty() && alpha_q.size() > 0) {
      std::ofstream dump(*an_dump);
      dump << "alpha_q";
      for (Index t = 0; t < alpha_q.size(); ++t) {
        dump << ' ' << tokens[static_cast<std::size_t>(t)] << ':' << alpha_q[t];
      }
      dump << "\nalpha_i";
      for (Index j = 0; j < alpha_i.size(); ++j) {
        dump << ' ' << kg.entities.surface(image->concepts[static_cast<std::size_t>(j)].v) << ':'
             << alpha_i[j];
      }
      dump << '\n';
    }
  });

  // ---- bench ----
  auto bn_cfg = std::make_shared<ExperimentConfig>();
  auto bn_counts = std::make_shared<std::string>("10000,20000,40000,80000");
  auto bn_repeats = std::make_shared<int>(50);
  auto bn_question = std::make_shared<std::string>("which object in the image is here");
  auto bn_image = std::make_shared<std::string>();
  CLI::App* bn = app.add_subcommand("bench", "measure retrieval latency vs entity count");
  add_path_options(bn, bn_cfg.get());
  bn->add_option("--counts", *bn_counts, "ascending entity counts, comma separated");
  bn->add_option("--repeats", *bn_repeats, "queries per count");
  bn->add_option("--question", *bn_question, "probe question");
  bn->add_option("--image-id", *bn_image, "probe image (default: first)");
  bn->callback([bn_cfg, bn_counts, bn_repeats, bn_question, bn_image] {
    KnowledgeGraph kg = load_kg(bn_cfg->kg_path);
    ScoringModel model = load_checkpoint(bn_cfg->kge_checkpoint);
    QaModel qa_model = load_qa_checkpoint(bn_cfg->qa_checkpoint);
    WordVectorTable words = load_vectors(bn_cfg->vectors_path);
    std::vector<ImageAsKnowledge> images = load_images(bn_cfg->images_path, kg);
    if (images.empty()) {
      throw DataError("bench: no images");
    }
    const ImageAsKnowledge* image = &images.front();
    for (const auto& img : images) {
      if (img.image_id == *bn_image) {
        image = &img;
      }
    }
    const auto rows = bench_inference(qa_model, model.table, words, tokenize(*bn_question),
                                      *image, parse_counts(*bn_counts), *bn_repeats);
    std::cout << "entities\tmedian_ms\tevals_per_query\n";
    for (const auto& row : rows) {
      std::cout << row.n_entities << '\t' << row.median_ms << '\t' << row.evals_per_query << '\n';
    }
  });

  // ---- sweep-lambda ----
  auto sw_cfg = std::make_shared<ExperimentConfig>();
  auto sw_topks = std::make_shared<std::string>("100,500");
  CLI::App* sw = app.add_subcommand("sweep-lambda", "composite-score weight grid");
  add_path_options(sw, sw_cfg.get());
  add_qa_options(sw, sw_cfg.get());
  sw->add_option("--top-ks", *sw_topks, "fact cutoffs, comma separated");
  sw->callback([sw_cfg, sw_topks] {
    static const double grid[][3] = {
        {1, 0, 0},           {0, 1, 0},          {0, 0, 1},        {0.34, 0.33, 0.33},
        {0.4, 0.3, 0.3},     {0.5, 0.5, 0},      {0.5, 0.25, 0.25}, {0.5, 0, 0.5},
        {0, 0.5, 0.5},       {0.6, 0.2, 0.2},    {0.7, 0.15, 0.15}, {0.8, 0.1, 0.1},
    };
    LoadedQaContext ctx = load_qa_context(*sw_cfg);
    const int n_splits = std::max(1, sw_cfg->splits);
    std::vector<SplitIndices> splits;
    std::vector<QaModel> models;
    for (int s = 0; s < n_splits; ++s) {
      splits.push_back(split_instances(ctx.data.instances.size(), sw_cfg->qa_train_fraction,
                                       sw_cfg->qa_split_seed + static_cast<std::uint64_t>(s)));
      QaTrainConfig qc = sw_cfg->qa;
      qc.seed = sw_cfg->qa.seed + static_cast<std::uint64_t>(s);
      models.push_back(train_qa(ctx.data, splits.back().train, ctx.model.table, ctx.words, qc));
    }
    const std::uint64_t hash = sw_cfg->as_config().hash();
    std::cout << "lambda1\tlambda2\tlambda3\ttop_k\thits1\thits3\n";
    for (Index top_k : parse_counts(*sw_topks)) {
      for (const auto& l : grid) {
        CompositeWeights weights{l[0], l[1], l[2]};
        QaMetrics mean;
        for (int s = 0; s < n_splits; ++s) {
          const QaMetrics m = evaluate_qa(ctx.data, splits[static_cast<std::size_t>(s)].test,
                                          models[static_cast<std::size_t>(s)], ctx.model.table,
                                          ctx.words, ctx.kg, QaEvalMode::Composite, weights,
                                          static_cast<int>(top_k));
          mean.hits1 += m.hits1;
          mean.hits3 += m.hits3;
        }
        mean.hits1 /= n_splits;
        mean.hits3 /= n_splits;
        std::cout << l[0] << '\t' << l[1] << '\t' << l[2] << '\t' << top_k << '\t' << mean.hits1
                  << '\t' << mean.hits3 << '\n';
        ResultRow row;
        row.config_hash = hash_hex(hash);
        row.seed = sw_cfg->qa.seed;
        char stage[96];
        std::snprintf(stage, sizeof(stage), "sweep l1=%g l2=%g l3=%g k=%lld", l[0], l[1], l[2],
                      static_cast<long long>(top_k));
        row.stage = stage;
        row.hits1 = mean.hits1;
        row.hits3 = mean.hits3;
        append_result_row(sw_cfg->results_csv, row);
      }
    }
  });

  // ---- compare-sampling ----
  auto cs_cfg = std::make_shared<ExperimentConfig>();
  auto cs_kind = std::make_shared<std::string>();
  auto cs_sampling = std::make_shared<std::string>();
  auto cs_kinds = std::make_shared<std::string>("transe,rotate,ermlp");
  auto cs_seeds = std::make_shared<int>(5);
  CLI::App* cs = app.add_subcommand("compare-sampling",
                                    "adversarial vs uniform sampling per model kind");
  add_path_options(cs, cs_cfg.get());
  add_kge_options(cs, cs_cfg.get(), cs_kind.get(), cs_sampling.get());
  cs->add_option("--kinds", *cs_kinds, "model kinds, comma separated");
  cs->add_option("--num-seeds", *cs_seeds, "seeds per arm");
  cs->callback([cs_cfg, cs_kinds, cs_seeds] {
    KnowledgeGraph kg = load_kg(cs_cfg->kg_path);
    const std::uint64_t hash = cs_cfg->as_config().hash();
    std::cout << "model\tsampling\thits1\thits10\tmrr\n";
    std::size_t start = 0;
    const std::string kinds = *cs_kinds + ",";
    while (start < kinds.size()) {
      const std::size_t pos = kinds.find(',', start);
      const std::string name = kinds.substr(start, pos - start);
      start = pos + 1;
      if (name.empty()) {
        continue;
      }
      const ModelKind kind = model_kind_from_string(name);
      std::map<Sampling, LinkPredMetrics> means;
      for (Sampling sampling : {Sampling::Adversarial, Sampling::Uniform}) {
        LinkPredMetrics mean;
        for (int s = 0; s < *cs_seeds; ++s) {
          KgeTrainConfig kc = cs_cfg->kge;
          kc.sampling = sampling;
          kc.seed = cs_cfg->kge.seed + static_cast<std::uint64_t>(s);
          const EdgeSplit split =
              split_edges(kg, cs_cfg->kg_train_fraction,
                          cs_cfg->kg_split_seed + static_cast<std::uint64_t>(s));
          const ScoringModel model = train_kge(kg, split.train, kind, kc);
          const LinkPredMetrics m = evaluate(model, split.test);
          mean.mr += m.mr;
          mean.mrr += m.mrr;
          mean.hits1 += m.hits1;
          mean.hits3 += m.hits3;
          mean.hits10 += m.hits10;
        }
        const Scalar n = static_cast<Scalar>(*cs_seeds);
        mean.mr /= n;
        mean.mrr /= n;
        mean.hits1 /= n;
        mean.hits3 /= n;
        mean.hits10 /= n;
        means[sampling] = mean;
        std::cout << name << '\t' << to_string(sampling) << '\t' << mean.hits1 << '\t'
                  << mean.hits10 << '\t' << mean.mrr << '\n';
        ResultRow row;
        row.config_hash = hash_hex(hash);
        row.seed = cs_cfg->kge.seed;
        row.stage = "compare-sampling " + name + " " + to_string(sampling);
        row.mr = mean.mr;
        row.mrr = mean.mrr;
        row.hits1 = mean.hits1;
        row.hits3 = mean.hits3;
        row.hits10 = mean.hits10;
        append_result_row(cs_cfg->results_csv, row);
      }
      std::cout << name << "\tdelta_hits1\t"
                << means[Sampling::Adversarial].hits1 - means[Sampling::Uniform].hits1 << '\n';
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
