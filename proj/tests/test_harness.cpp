#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "kgqa/config.hpp"
#include "kgqa/pipeline.hpp"
#include "kgqa/synth.hpp"
#include "test_util.hpp"

using namespace kgqa;
using testutil::slurp;
using testutil::TempDir;
using testutil::write_file;

namespace {

SynthPaths make_paths(const TempDir& tmp) {
  return {tmp.path("kg.tsv"), tmp.path("vectors.txt"), tmp.path("images.tsv"), tmp.path("qa.tsv")};
}

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_entities = 50;
  cfg.n_relations = 4;
  cfg.n_edges = 220;
  cfg.n_images = 10;
  cfg.n_questions = 40;
  cfg.planted_dim = 4;
  cfg.seed = seed;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KGQA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("generate_synthetic passes its own consistency checker") {
  TempDir tmp("synth");
  const SynthPaths paths = make_paths(tmp);
  generate_synthetic(small_config(11), paths);
  const ConsistencyReport report = check_consistency(paths);
  for (const auto& p : report.problems) {
    MESSAGE(p);
  }
  CHECK(report.ok);
  CHECK(report.n_edges == 220);
  CHECK(report.n_images == 10);
  CHECK(report.n_questions == 40);
}

TEST_CASE("generate_synthetic: image_answer_fraction=1 forces in-image answers") {
  TempDir tmp("synth");
  SynthConfig cfg = small_config(12);
  cfg.image_answer_fraction = 1.0;
  const SynthPaths paths = make_paths(tmp);
  generate_synthetic(cfg, paths);
  const KnowledgeGraph kg = load_kg(paths.kg);
  const QaDataset data = load_qa_dataset(paths.images, paths.qa, kg);
  for (const QAInstance& inst : data.instances) {
    CHECK(inst.source == AnswerSource::Image);
    // the loader already enforces answer-in-image for image-source rows
  }
  CHECK(data.instances.size() == 40);
}

TEST_CASE("generate_synthetic is byte-identical for a fixed seed") {
  TempDir a("synth_a");
  TempDir b("synth_b");
  generate_synthetic(small_config(7), make_paths(a));
  generate_synthetic(small_config(7), make_paths(b));
  for (const char* f : {"kg.tsv", "vectors.txt", "images.tsv", "qa.tsv"}) {
    CHECK(slurp(a.path(f)) == slurp(b.path(f)));
  }
  TempDir c("synth_c");
  generate_synthetic(small_config(8), make_paths(c));
  CHECK(slurp(a.path("kg.tsv")) != slurp(c.path("kg.tsv")));
}

TEST_CASE("generate_synthetic rejects infeasible edge counts") {
  SynthConfig cfg = small_config(1);
  cfg.n_entities = 5;
  cfg.n_relations = 1;
  cfg.n_edges = 100;  // > 5*4*1
  TempDir tmp("synth");
  CHECK_THROWS_AS(generate_synthetic(cfg, make_paths(tmp)), DataError);
}

TEST_CASE("config files parse, override, and hash stably") {
  TempDir tmp("config");
  const auto path = write_file(tmp.path("exp.cfg"),
                               "# comment\n"
                               "steps = 120\n"
                               "model = transe   # trailing comment\n"
                               "lr=0.25\n");
  Config cfg = Config::load(path);
  CHECK(cfg.get_int("steps", 0) == 120);
  CHECK(cfg.get_string("model", "") == "transe");
  CHECK(cfg.get_double("lr", 0) == 0.25);
  CHECK(cfg.get_int("missing", 9) == 9);
  const std::uint64_t h1 = cfg.hash();
  cfg.set("steps", "121");
  CHECK(cfg.hash() != h1);
  cfg.set("steps", "120");
  CHECK(cfg.hash() == h1);
  CHECK_THROWS_AS(Config::load(write_file(tmp.path("bad.cfg"), "no equals sign\n")), DataError);
}

TEST_CASE("split_instances partitions deterministically") {
  const SplitIndices a = split_instances(40, 0.5, 3);
  const SplitIndices b = split_instances(40, 0.5, 3);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 20);
  CHECK(a.test.size() == 20);
  const SplitIndices c = split_instances(40, 0.5, 4);
  CHECK(a.train != c.train);
}

TEST_CASE("result rows render fixed columns") {
  ResultRow row;
  row.config_hash = "abc";
  row.seed = 7;
  row.stage = "linkpred";
  row.mr = 2.0;
  row.hits10 = 0.5;
  CHECK(result_row_csv(row) == "abc,7,linkpred,2,,,,0.5,");
}

TEST_CASE("pipeline: empty stage set is a no-op") {
  ExperimentConfig cfg;
  CHECK(run_pipeline(cfg, {}).empty());
}

TEST_CASE("pipeline: kge then linkpred appends a metrics row") {
  TempDir tmp("pipe");
  const SynthPaths paths = make_paths(tmp);
  generate_synthetic(small_config(5), paths);
  ExperimentConfig cfg;
  cfg.kg_path = paths.kg;
  cfg.kge_checkpoint = tmp.path("kge.ckpt");
  cfg.results_csv = tmp.path("results.csv");
  cfg.loss_csv = tmp.path("loss.csv");
  cfg.kind = ModelKind::TransE;
  cfg.kge.steps = 40;
  cfg.kge.batch_size = 16;
  cfg.kge.dim = 4;
  cfg.kge.negatives = 4;
  const auto rows = run_pipeline(cfg, {Stage::Kge, Stage::Linkpred});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].find("linkpred") != std::string::npos);
  const std::string csv = slurp(tmp.path("results.csv"));
  CHECK(csv.find("config_hash,seed,stage") != std::string::npos);
  CHECK(csv.find("linkpred") != std::string::npos);
  const std::string loss = slurp(tmp.path("loss.csv"));
  CHECK(loss.rfind("step,loss,lr", 0) == 0);

  // bit-reproducibility: rerunning the same config appends an identical row
  const auto rows2 = run_pipeline(cfg, {Stage::Kge, Stage::Linkpred});
  CHECK(rows2 == rows);
}

TEST_CASE("pipeline: qa stage without a kge checkpoint is a dependency error") {
  TempDir tmp("pipe");
  const SynthPaths paths = make_paths(tmp);
  generate_synthetic(small_config(6), paths);
  ExperimentConfig cfg;
  cfg.kg_path = paths.kg;
  cfg.vectors_path = paths.vectors;
  cfg.images_path = paths.images;
  cfg.qa_path = paths.qa;
  cfg.kge_checkpoint = tmp.path("missing.ckpt");
  cfg.qa_checkpoint = tmp.path("qa.ckpt");
  cfg.qa.epochs = 1;
  cfg.qa.gate_epochs = 1;
  cfg.qa.state_dim = 4;
  CHECK_THROWS_WITH_AS(run_pipeline(cfg, {Stage::Qa}), doctest::Contains("kge checkpoint"),
                       DataError);
}

TEST_CASE("pipeline: occluded runs never touch removed edges") {
  TempDir tmp("pipe_occl");
  const SynthPaths paths = make_paths(tmp);
  generate_synthetic(small_config(9), paths);
  ExperimentConfig cfg;
  cfg.kg_path = paths.kg;
  cfg.vectors_path = paths.vectors;
  cfg.images_path = paths.images;
  cfg.qa_path = paths.qa;
  cfg.kge_checkpoint = tmp.path("kge.ckpt");
  cfg.qa_checkpoint = tmp.path("qa.ckpt");
  cfg.kind = ModelKind::TransE;
  cfg.kge.steps = 30;
  cfg.kge.batch_size = 16;
  cfg.kge.dim = 4;
  cfg.kge.negatives = 4;
  cfg.occlude_enabled = true;
  cfg.occlusion.mode = OcclusionSpec::Mode::Fraction;
  cfg.occlusion.fraction = 0.3;
  cfg.occlusion.seed = 2;
  cfg.qa.epochs = 2;
  cfg.qa.gate_epochs = 1;
  cfg.qa.state_dim = 4;
  cfg.splits = 1;
  // run_pipeline raises if any stage consults an occluded triple
  CHECK_NOTHROW(
      run_pipeline(cfg, {Stage::Kge, Stage::Linkpred, Stage::Qa, Stage::Eval, Stage::Composite}));
}

TEST_CASE("bench: zero repeats yields an empty table; counts must ascend") {
  TempDir tmp("bench");
  const SynthPaths paths = make_paths(tmp);
  generate_synthetic(small_config(3), paths);
  const KnowledgeGraph kg = load_kg(paths.kg);
  const WordVectorTable words = load_vectors(paths.vectors);
  const QaDataset data = load_qa_dataset(paths.images, paths.qa, kg);
  Rng rng(1);
  EmbeddingTable table;
  table.dim = 4;
  table.entity_vectors.resize(kg.entities.size(), 4);
  for (Index i = 0; i < table.entity_vectors.rows(); ++i) {
    for (Index d = 0; d < 4; ++d) {
      table.entity_vectors(i, d) = rng.uniform(-1, 1);
    }
  }
  const QaModel model = init_qa_model(words.dim(), 4, 4, 8, 2);
  const TokenSet q = data.instances[0].question;
  const ImageAsKnowledge& img = data.images[0];
  CHECK(bench_inference(model, table, words, q, img, {100, 200}, 0).empty());
  CHECK_THROWS_AS(bench_inference(model, table, words, q, img, {200, 100}, 3), DataError);
  const auto rows = bench_inference(model, table, words, q, img, {100, 250}, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].evals_per_query == 100);
  CHECK(rows[1].evals_per_query == 250);
}

// ---- CLI surface ----

TEST_CASE("cli: usage, data, and success exit codes") {
  TempDir tmp("cli");
  CHECK(run_cli("definitely-not-a-subcommand") == 1);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("train-kge --kg /nonexistent/kg.tsv --ckpt " + tmp.path("x.ckpt")) == 2);
  CHECK(run_cli("gen --out-dir " + tmp.path("corpus") +
                " --entities 40 --relations 4 --edges 150 --images 8 --questions 30 "
                "--planted-dim 4 --seed 2") == 0);
  // malformed KG -> data error
  write_file(tmp.path("bad.tsv"), "one\ttwo\n");
  CHECK(run_cli("train-kge --kg " + tmp.path("bad.tsv") + " --ckpt " + tmp.path("x.ckpt")) == 2);
}

TEST_CASE("cli: end-to-end gen -> train -> eval -> answer round trip") {
  TempDir tmp("cli_e2e");
  const std::string dir = tmp.path("d");
  REQUIRE(run_cli("gen --out-dir " + dir +
                  " --entities 40 --relations 4 --edges 150 --images 8 --questions 30 "
                  "--planted-dim 4 --seed 2") == 0);
  const std::string common = " --kg " + dir + "/kg.tsv --vectors " + dir + "/vectors.txt" +
                             " --images " + dir + "/images.tsv --qa " + dir + "/qa.tsv" +
                             " --ckpt " + dir + "/kge.ckpt --qa-ckpt " + dir + "/qa.ckpt" +
                             " --results " + dir + "/results.csv";
  REQUIRE(run_cli("train-kge --kg " + dir + "/kg.tsv --ckpt " + dir +
                  "/kge.ckpt --model transe --dim 4 --steps 30 --batch 16 --negatives 4") == 0);
  CHECK(run_cli("eval-linkpred --kg " + dir + "/kg.tsv --ckpt " + dir + "/kge.ckpt --results " +
                dir + "/results.csv") == 0);
  REQUIRE(run_cli("train-qa" + common + " --epochs 2 --gate-epochs 1 --state-dim 4") == 0);
  CHECK(run_cli("eval-qa" + common + " --mode standalone") == 0);
  CHECK(run_cli("eval-qa" + common + " --mode composite --top-k 20") == 0);
  CHECK(run_cli("occlude --kg " + dir + "/kg.tsv --mode fraction --fraction 0.4 --out " + dir +
                "/occ.tsv") == 0);
  // answer an actual question from the corpus
  const KnowledgeGraph kg = load_kg(dir + "/kg.tsv");
  const QaDataset data = load_qa_dataset(dir + "/images.tsv", dir + "/qa.tsv", kg);
  const QAInstance& inst = data.instances[0];
  const std::string image_id = data.images[static_cast<std::size_t>(inst.image_index)].image_id;
  CHECK(run_cli("answer" + common + " --question \"" + inst.raw_question + "\" --image-id " +
                image_id + " --dump-attention " + dir + "/att.txt") == 0);
  CHECK(slurp(dir + "/att.txt").find("alpha_q") != std::string::npos);
  CHECK(run_cli("bench" + common + " --counts 500,1000 --repeats 3") == 0);
}
