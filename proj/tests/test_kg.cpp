#include <doctest.h>

#include <set>

#include "kgqa/kg.hpp"
#include "test_util.hpp"

using namespace kgqa;
using testutil::TempDir;
using testutil::random_kg;
using testutil::slurp;
using testutil::write_file;

TEST_CASE("load_kg builds vocabularies in first-appearance order") {
  TempDir tmp("kg");
  const auto path = write_file(tmp.path("kg.tsv"),
                               "banana\tHasProperty\trich in potassium\n");
  LoadReport report;
  const KnowledgeGraph kg = load_kg(path, &report);
  CHECK(kg.entities.size() == 2);
  CHECK(kg.relations.size() == 1);
  CHECK(kg.edges.size() == 1);
  CHECK(report.duplicates_dropped == 0);
  // case-folded at load
  CHECK(kg.entities.surface(0) == "banana");
  CHECK(kg.relations.surface(0) == "hasproperty");
  CHECK(kg.entities.surface(1) == "rich in potassium");
  CHECK(kg.edges[0].head.v == 0);
  CHECK(kg.edges[0].tail.v == 1);
}

TEST_CASE("load_kg rejects an empty file") {
  TempDir tmp("kg");
  const auto path = write_file(tmp.path("empty.tsv"), "");
  CHECK_THROWS_WITH_AS(load_kg(path), doctest::Contains("EmptyGraph"), DataError);
}

TEST_CASE("load_kg drops duplicate edges and counts them") {
  TempDir tmp("kg");
  const auto path = write_file(tmp.path("dup.tsv"), "a\tr\tb\na\tr\tb\n");
  LoadReport report;
  const KnowledgeGraph kg = load_kg(path, &report);
  CHECK(kg.edges.size() == 1);
  CHECK(report.duplicates_dropped == 1);
}

TEST_CASE("load_kg reports the malformed line number") {
  TempDir tmp("kg");
  const auto path = write_file(tmp.path("bad.tsv"), "a\tr\tb\nonly two\tfields\n");
  CHECK_THROWS_WITH_AS(load_kg(path), doctest::Contains("line 2"), DataError);
}

TEST_CASE("split_edges partitions deterministically") {
  KnowledgeGraph kg = random_kg(20, 2, 10, 7);
  const EdgeSplit split = split_edges(kg, 0.8, 7);
  CHECK(split.train.size() == 8);
  CHECK(split.test.size() == 2);
  const EdgeSplit again = split_edges(kg, 0.8, 7);
  CHECK(split.train == again.train);
  CHECK(split.test == again.test);
  std::set<Triple> train(split.train.begin(), split.train.end());
  for (const Triple& t : split.test) {
    CHECK(train.count(t) == 0);
  }
}

TEST_CASE("split_edges rounding: test count floors, remainder trains") {
  // oracle: floor((1-0.8)*5) = 1 test edge
  KnowledgeGraph kg = random_kg(10, 2, 5, 3);
  const EdgeSplit split = split_edges(kg, 0.8, 0);
  CHECK(split.train.size() == 4);
  CHECK(split.test.size() == 1);
}

TEST_CASE("split_edges rejects out-of-range fractions") {
  KnowledgeGraph kg = random_kg(10, 2, 5, 3);
  CHECK_THROWS_AS(split_edges(kg, 0.0, 0), DataError);
  CHECK_THROWS_AS(split_edges(kg, 1.0, 0), DataError);
}

TEST_CASE("split_edges partition property over sizes 1..200") {
  for (int n : {1, 2, 3, 5, 17, 64, 100, 200}) {
    KnowledgeGraph kg = random_kg(std::max(4, n / 2), 3, n, static_cast<std::uint64_t>(n));
    const EdgeSplit split = split_edges(kg, 0.7, 11);
    CHECK(split.train.size() + split.test.size() == kg.edges.size());
    std::multiset<Triple> all(kg.edges.begin(), kg.edges.end());
    std::multiset<Triple> merged(split.train.begin(), split.train.end());
    merged.insert(split.test.begin(), split.test.end());
    CHECK(all == merged);
  }
}

TEST_CASE("occlude fraction removes floor(fraction * edges)") {
  KnowledgeGraph kg = random_kg(40, 3, 100, 5);
  OcclusionSpec spec;
  spec.mode = OcclusionSpec::Mode::Fraction;
  spec.fraction = 0.5;
  spec.seed = 1;
  const KnowledgeGraph out = occlude(kg, spec);
  CHECK(out.edges.size() == 50);
  CHECK(out.provenance == "occluded");
  // vocabulary untouched
  CHECK(out.entities.size() == kg.entities.size());
}

TEST_CASE("occlude fraction 0 is the identity on edges") {
  KnowledgeGraph kg = random_kg(20, 2, 30, 5);
  OcclusionSpec spec;
  spec.mode = OcclusionSpec::Mode::Fraction;
  spec.fraction = 0.0;
  CHECK(occlude(kg, spec).edges == kg.edges);
}

TEST_CASE("occlude fraction 1 is rejected") {
  KnowledgeGraph kg = random_kg(20, 2, 30, 5);
  OcclusionSpec spec;
  spec.mode = OcclusionSpec::Mode::Fraction;
  spec.fraction = 1.0;
  CHECK_THROWS_AS(occlude(kg, spec), DataError);
}

TEST_CASE("occlude qa-facts removes exactly the supplied facts") {
  KnowledgeGraph kg = random_kg(20, 2, 10, 9);
  std::vector<Triple> facts = {kg.edges[0], kg.edges[4], kg.edges[7]};
  OcclusionSpec spec;
  spec.mode = OcclusionSpec::Mode::QaFacts;
  const KnowledgeGraph out = occlude(kg, spec, &facts);
  CHECK(out.edges.size() == 7);
  for (const Triple& f : facts) {
    CHECK_FALSE(out.contains(f));
  }
}

TEST_CASE("occlude qa-facts rejects facts missing from the graph") {
  KnowledgeGraph kg = random_kg(20, 2, 10, 9);
  std::vector<Triple> facts = {Triple{EntityId(0), RelationId(0), EntityId(0)}};
  while (kg.contains(facts[0])) {
    facts[0].tail = EntityId(facts[0].tail.v + 1);
  }
  OcclusionSpec spec;
  spec.mode = OcclusionSpec::Mode::QaFacts;
  CHECK_THROWS_AS(occlude(kg, spec, &facts), DataError);
  CHECK_THROWS_AS(occlude(kg, spec, nullptr), DataError);
}

TEST_CASE("occlude output is always a subset of the input") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    KnowledgeGraph kg = random_kg(15, 3, 40, seed);
    OcclusionSpec spec;
    spec.mode = OcclusionSpec::Mode::Fraction;
    spec.fraction = static_cast<double>(seed) / 10.0;
    spec.seed = seed;
    const KnowledgeGraph out = occlude(kg, spec);
    for (const Triple& t : out.edges) {
      CHECK(kg.contains(t));
    }
  }
}

TEST_CASE("occlude is bit-reproducible for a fixed seed") {
  KnowledgeGraph kg = random_kg(30, 3, 80, 2);
  OcclusionSpec spec;
  spec.mode = OcclusionSpec::Mode::Fraction;
  spec.fraction = 0.3;
  spec.seed = 42;
  CHECK(occlude(kg, spec).edges == occlude(kg, spec).edges);
}

TEST_CASE("load then save then load is idempotent") {
  TempDir tmp("kg");
  save_kg(random_kg(12, 3, 25, 13), tmp.path("seed.tsv"));
  const KnowledgeGraph first = load_kg(tmp.path("seed.tsv"));
  save_kg(first, tmp.path("second.tsv"));
  const KnowledgeGraph second = load_kg(tmp.path("second.tsv"));
  REQUIRE(second.edges.size() == first.edges.size());
  CHECK(second.edges == first.edges);
  REQUIRE(second.entities.size() == first.entities.size());
  for (std::int32_t i = 0; i < first.entities.size(); ++i) {
    CHECK(second.entities.surface(i) == first.entities.surface(i));
  }
  // and the serialized bytes stabilize after one round trip
  save_kg(second, tmp.path("third.tsv"));
  CHECK(slurp(tmp.path("second.tsv")) == slurp(tmp.path("third.tsv")));
}
