// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <promptevo/datasets.hpp>
#include <promptevo/image.hpp>

#include <doctest.h>

#include <set>

using namespace promptevo;
using testsupport::spit;
using testsupport::TempDir;

namespace
{

TaskInstance with_scorer(ScorerKind kind, std::string gold)
{
    TaskInstance inst;
    inst.id = "x";
    inst.gold_answer = std::move(gold);
    inst.scorer.kind = kind;
    return inst;
}

} // namespace

TEST_CASE("manifest parsing")
{
    const auto m = Manifest::from_json(
        Json::parse(R"({"scorer": "numeric_tolerance", "tolerance": 0.05,
                        "fields": {"question": "prompt", "answer": "label"}, "image_root": "imgs"})"),
        "/data/set");
    CHECK(m.scorer.kind == ScorerKind::numeric_tolerance);
    CHECK(m.scorer.tolerance == 0.05);
    CHECK(m.question_field == "prompt");
    CHECK(m.answer_field == "label");
    CHECK(m.id_field == "id");
    CHECK(m.image_root == std::filesystem::path("/data/set/imgs"));
    CHECK_THROWS_AS(Manifest::from_json(Json::parse(R"({})"), "."), ConfigError);
    CHECK_THROWS_AS(Manifest::from_json(Json::parse(R"({"scorer": "fuzzy"})"), "."), ConfigError);
    CHECK_THROWS_AS(Manifest::from_json(Json::parse(R"({"scorer": "numeric_tolerance", "tolerance": -1})"), "."),
                    ConfigError);
    CHECK_THROWS_AS(Manifest::from_file("/nonexistent/manifest.json"), ConfigError);
    for (auto k: {ScorerKind::exact_match, ScorerKind::numeric_tolerance, ScorerKind::multiple_choice,
                  ScorerKind::count_accuracy})
        CHECK(scorer_kind_from_string(to_string(k)) == k);
}

TEST_CASE("loading records, images and diagnostics")
{
    TempDir dir;
    write_png_file(Image(4, 4, 10), dir / "a.png");
    std::string lines;
    for (int i = 0; i < 12; ++i)
        lines += R"({"id": "r)" + std::to_string(i) + R"(", "question": "q", "images": ["a.png"], "answer": )" +
                 std::to_string(i) + R"(, "metadata": {"k": 1}})" + "\n\n";
    lines += R"({"id": "bad", "question": "q"})" + std::string("\n");
    spit(dir / "set.jsonl", lines);

    const auto loaded = load_task(dir / "set.jsonl", Manifest::from_json(Json::parse(R"({"scorer": "count_accuracy"})"), dir.path()));
    REQUIRE(loaded.instances.size() == 12);
    REQUIRE(loaded.rejected.size() == 1);
    CHECK(loaded.rejected[0].line == 25);
    const auto& first = loaded.instances[0];
    CHECK(first.id == "r0");
    CHECK(first.gold_answer == "0");
    REQUIRE(first.image_paths.size() == 1);
    CHECK(first.image_paths[0] == dir / "a.png");
    CHECK(first.metadata.at("k") == "1");
    CHECK(first.scorer.kind == ScorerKind::count_accuracy);
}

TEST_CASE("too many bad records abort the load")
{
    TempDir dir;
    std::string lines;
    for (int i = 0; i < 5; ++i)
        lines += R"({"id": "r)" + std::to_string(i) + R"(", "question": "q", "answer": "a"})" + std::string("\n");
    lines += "not json\n";
    lines += R"({"id": "r0", "question": "dup", "answer": "a"})" + std::string("\n");
    lines += R"({"id": "m", "question": "q", "images": ["missing.png"], "answer": "a"})" + std::string("\n");
    spit(dir / "set.jsonl", lines);
    const auto manifest = Manifest::from_json(Json::parse(R"({"scorer": "exact_match"})"), dir.path());
    CHECK_THROWS_AS(load_task(dir / "set.jsonl", manifest), LoadError);

    auto lenient = manifest;
    lenient.max_bad_fraction = 0.5;
    const auto loaded = load_task(dir / "set.jsonl", lenient);
    CHECK(loaded.instances.size() == 5);
    CHECK(loaded.rejected.size() == 3);

    spit(dir / "empty.jsonl", "\n  \n");
    CHECK_THROWS_AS(load_task(dir / "empty.jsonl", manifest), LoadError);
    CHECK_THROWS_AS(load_task(dir / "absent.jsonl", manifest), LoadError);
}

TEST_CASE("split is a seeded partition of the requested size")
{
    const auto instances = testsupport::plain_instances(50);
    for (double fraction: {0.2, 0.5, 0.8})
    {
        const auto s = split(instances, fraction, 7);
        CHECK(s.train.size() == static_cast<std::size_t>(std::llround(fraction * 50)));
        CHECK(s.train.size() + s.test.size() == 50);
        std::set<std::string> all(s.train.begin(), s.train.end());
        for (const auto& id: s.test)
            CHECK(all.insert(id).second);
        CHECK(all.size() == 50);
        CHECK(std::is_sorted(s.train.begin(), s.train.end()));
        CHECK(split(instances, fraction, 7).train == s.train);
    }
    CHECK(split(instances, 0.5, 7).train != split(instances, 0.5, 8).train);
    CHECK(split(testsupport::plain_instances(3), 0.01, 1).train.size() == 1);
    CHECK(split(testsupport::plain_instances(3), 0.99, 1).test.size() == 1);
    CHECK_THROWS_AS(split(instances, 1.0, 1), PreconditionError);
    CHECK_THROWS_AS(split(instances, 0.0, 1), PreconditionError);
}

TEST_CASE("select keeps requested order")
{
    const auto instances = testsupport::plain_instances(5);
    const auto picked = select(instances, {"i-003", "i-001"});
    REQUIRE(picked.size() == 2);
    CHECK(picked[0].id == "i-003");
    CHECK_THROWS_AS(select(instances, {"zzz"}), InputError);
}

TEST_CASE("answer scoring per scorer kind")
{
    const auto exact = with_scorer(ScorerKind::exact_match, "Red Square");
    CHECK(score_answer("  red   square. ", exact) == 100.0);
    CHECK(score_answer("red squares", exact) == 0.0);

    const auto mc = with_scorer(ScorerKind::multiple_choice, "(B)");
    CHECK(score_answer("b", mc) == 100.0);
    CHECK(score_answer("B) the second one", mc) == 100.0);
    CHECK(score_answer("The answer is (b)", mc) == 100.0);
    CHECK(score_answer("C", mc) == 0.0);
    CHECK(score_answer("maybe", mc) == 0.0);

    auto num = with_scorer(ScorerKind::numeric_tolerance, "1,000");
    num.scorer.tolerance = 0.01;
    CHECK(score_answer("about 1005", num) == 100.0);
    CHECK(score_answer("1020", num) == 0.0);
    CHECK(score_answer("none", num) == 0.0);

    auto count = with_scorer(ScorerKind::count_accuracy, "8");
    CHECK(score_answer("8", count) == 100.0);
    CHECK(score_answer("7", count) == 0.0);
    CHECK(score_answer("8.5", count) == 0.0);
    count.scorer.graded_count = true;
    CHECK(score_answer("6", count) == doctest::Approx(75.0));
    CHECK(score_answer("20", count) == 0.0);
}

TEST_CASE("answer extraction helpers")
{
    CHECK(normalize_answer("  Hello\tWorld!! ") == "hello world");
    CHECK(extract_number("there are -3.5e1 things") == -35.0);
    CHECK_FALSE(extract_number("nothing"));
    CHECK(extract_option_letter("Option: d") == 'd');
    CHECK_FALSE(extract_option_letter("banana"));
}

TEST_CASE("the landscape fixture loads cleanly")
{
    const auto dir = testsupport::kData / "landscape";
    const auto loaded = load_task(dir / "instances.jsonl", Manifest::from_file(dir / "manifest.json"));
    CHECK(loaded.instances.size() == 50);
    CHECK(loaded.rejected.empty());
    std::map<std::string, int> per_keyword;
    for (const auto& inst: loaded.instances)
        per_keyword[inst.metadata.at("keyword")]++;
    CHECK(per_keyword.size() == 5);
    for (const auto& [kw, n]: per_keyword)
        CHECK(n == 10);
}
