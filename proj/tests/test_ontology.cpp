// Ontology text format, forward-chaining inference (checked against a
// brute-force fixpoint oracle), metadata mapping, and decision fusion.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pneumo/ontology.hpp"

using pneumo::Diagnosis;
using pneumo::FindingSet;
using pneumo::InferenceResult;
using pneumo::MapOp;
using pneumo::Ontology;
using pneumo::SampleRecord;
using pneumo::SeededRng;

namespace {

const char* kClinicOntology =
    "# pediatric chest-film screening knowledge base\n"
    "concept RadiologicFinding\n"
    "concept LungOpacity\n"
    "concept OpacityRegion\n"
    "concept ClinicalSign\n"
    "concept Fever\n"
    "concept Cough\n"
    "concept InfectionPattern\n"
    "concept Pneumonia\n"
    "isa LungOpacity RadiologicFinding\n"
    "isa OpacityRegion LungOpacity\n"
    "isa Fever ClinicalSign\n"
    "isa Cough ClinicalSign\n"
    "rule R1: OpacityRegion & InfectionPattern => Pneumonia\n"
    "rule R2: Fever & Cough => InfectionPattern\n"
    "map p_cnn >= 0.75 -> OpacityRegion\n"
    "map fever == 1 -> Fever\n"
    "map cough == 1 -> Cough\n";

Ontology clinic() { return pneumo::parse_ontology(kClinicOntology); }

// Line number a parse failure reports, or -1 if it parses.
int error_line(const std::string& text) {
    try {
        pneumo::parse_ontology(text, "kb.onto");
        return -1;
    } catch (const pneumo::ParseError& e) {
        const std::string msg = e.what();
        const auto key = msg.find(" line ");
        REQUIRE(key != std::string::npos);
        return std::stoi(msg.substr(key + 6));
    }
}

SampleRecord record_with(std::vector<std::pair<std::string, std::string>> meta,
                         std::optional<int> age = std::nullopt) {
    SampleRecord rec;
    rec.image_path = "x.ppm";
    rec.label = 1;
    rec.age_months = age;
    rec.metadata = std::move(meta);
    return rec;
}

} // namespace

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

TEST_CASE("the clinical knowledge base parses into its declared parts") {
    const Ontology o = clinic();
    CHECK(o.concepts.size() == 8);
    CHECK(o.isa.size() == 4);
    REQUIRE(o.rules.size() == 2);
    CHECK(o.mappings.size() == 3);

    CHECK(o.has_concept("Pneumonia"));
    CHECK(!o.has_concept("Tuberculosis"));

    CHECK(o.rules[0].name == "R1");
    CHECK(o.rules[0].body == std::vector<std::string>{"OpacityRegion", "InfectionPattern"});
    CHECK(o.rules[0].head == "Pneumonia");
    CHECK(o.rules[1].name == "R2");

    CHECK(o.mappings[0].field == "p_cnn");
    CHECK(o.mappings[0].op == MapOp::Ge);
    CHECK(o.mappings[0].value == "0.75");
    CHECK(o.mappings[0].concept_name == "OpacityRegion");
}

TEST_CASE("the shipped knowledge base file loads") {
    const Ontology o = pneumo::parse_ontology_file(DEFAULT_ONTOLOGY);
    CHECK(o.has_concept("Pneumonia"));
    CHECK(!o.rules.empty());
    CHECK(!o.mappings.empty());
}

TEST_CASE("parse errors name the offending line") {
    CHECK(error_line("concept A\nconcept A\n") == 2);               // duplicate concept
    CHECK(error_line("concept A\nisa A\n") == 2);                   // isa arity
    CHECK(error_line("concept A\nisa A A\n") == 2);                 // self loop
    CHECK(error_line("concept A\nisa A B\n") == 2);                 // undeclared parent
    CHECK(error_line("wibble A\n") == 1);                           // unknown directive
    CHECK(error_line("concept A\nrule R A => B\n") == 2);           // missing colon
    CHECK(error_line("concept A\nrule R: A =>\n") == 2);            // missing head
    CHECK(error_line("concept A\nrule R: => A\n") == 2);            // empty body
    CHECK(error_line("concept A\nrule R: B => A\n") == 2);          // undeclared body
    CHECK(error_line("concept A\nrule R: A & A => Q\n") == 2);      // undeclared head
    CHECK(error_line("concept A\nmap f == 1 A\n") == 2);            // missing arrow
    CHECK(error_line("concept A\nmap f ~= 1 -> A\n") == 2);         // unknown operator
    CHECK(error_line("concept A\nmap f == 1 -> B\n") == 2);         // undeclared target
    CHECK(error_line("concept bad-name\n") == 1);                   // invalid name
    CHECK(error_line("concept A\nrule R: A => A\nrule R: A => A\n") == 3); // dup rule
    CHECK(error_line("# fine\nconcept A\nconcept B\nisa A B\n") == -1);
}

TEST_CASE("is-a cycles are rejected with the closing edge's line") {
    const int line = error_line(
        "concept A\nconcept B\nconcept C\n"
        "isa A B\nisa B C\nisa C A\n");
    CHECK(line == 6);
    try {
        pneumo::parse_ontology("concept A\nconcept B\nisa A B\nisa B A\n");
        FAIL("cycle not caught");
    } catch (const pneumo::ParseError& e) {
        CHECK(std::string(e.what()).find("cycle") != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

TEST_CASE("closure contains all is-a ancestors") {
    const InferenceResult r = pneumo::infer(clinic(), {"OpacityRegion"});
    CHECK(r.closure == FindingSet{"OpacityRegion", "LungOpacity", "RadiologicFinding"});
    CHECK(r.trace.empty());
}

TEST_CASE("rules chain and the trace records firing order") {
    const InferenceResult r =
        pneumo::infer(clinic(), {"OpacityRegion", "Fever", "Cough"});
    CHECK(r.closure.count("InfectionPattern") == 1);  // R2
    CHECK(r.closure.count("Pneumonia") == 1);         // then R1
    CHECK(r.trace == std::vector<std::string>{"R2", "R1"});
}

TEST_CASE("a rule whose head is already held leaves no trace") {
    const InferenceResult r =
        pneumo::infer(clinic(), {"OpacityRegion", "Fever", "Cough", "Pneumonia",
                                 "InfectionPattern"});
    CHECK(r.trace.empty());
    CHECK(r.closure.count("Pneumonia") == 1);
}

TEST_CASE("inference rejects findings outside the ontology") {
    // A finding that was never declared is a caller mistake, not a defect in
    // the knowledge base, so it surfaces as a usage error.
    CHECK_THROWS_AS(pneumo::infer(clinic(), {"Wheeze"}), pneumo::ValueError);
}

TEST_CASE("inference matches the brute-force fixpoint oracle") {
    SeededRng rng(1234);
    for (int t = 0; t < 200; ++t) {
        const oracles::RandomOntologyCase c = oracles::random_ontology(rng);
        const InferenceResult r = pneumo::infer(c.ontology, c.findings);
        CHECK(r.closure == oracles::closure_ref(c.ontology, c.findings));
    }
}

TEST_CASE("inference is monotone in its findings") {
    SeededRng rng(55);
    for (int t = 0; t < 200; ++t) {
        const oracles::RandomOntologyCase c = oracles::random_ontology(rng);
        const FindingSet full = pneumo::infer(c.ontology, c.findings).closure;

        FindingSet subset;
        for (const std::string& f : c.findings)
            if (rng.bounded(2) == 0) subset.insert(f);
        const FindingSet sub_closure = pneumo::infer(c.ontology, subset).closure;
        CHECK(std::includes(full.begin(), full.end(), sub_closure.begin(),
                            sub_closure.end()));
    }
}

TEST_CASE("inference is idempotent") {
    SeededRng rng(56);
    for (int t = 0; t < 200; ++t) {
        const oracles::RandomOntologyCase c = oracles::random_ontology(rng);
        const FindingSet once = pneumo::infer(c.ontology, c.findings).closure;
        const InferenceResult twice = pneumo::infer(c.ontology, once);
        CHECK(twice.closure == once);
        CHECK(twice.trace.empty());  // nothing new can fire on a closed set
    }
}

TEST_CASE("the closure is independent of rule declaration order") {
    SeededRng rng(57);
    for (int t = 0; t < 200; ++t) {
        oracles::RandomOntologyCase c = oracles::random_ontology(rng);
        const FindingSet forward = pneumo::infer(c.ontology, c.findings).closure;
        std::reverse(c.ontology.rules.begin(), c.ontology.rules.end());
        CHECK(pneumo::infer(c.ontology, c.findings).closure == forward);
        rng.shuffle(c.ontology.rules);
        CHECK(pneumo::infer(c.ontology, c.findings).closure == forward);
    }
}

// ---------------------------------------------------------------------------
// Metadata mapping
// ---------------------------------------------------------------------------

TEST_CASE("mapping rules fire on metadata and the network probability") {
    const Ontology o = clinic();

    const FindingSet none = pneumo::annotate_case(0.5, record_with({}), o);
    CHECK(none.empty());

    const FindingSet sick = pneumo::annotate_case(
        0.9, record_with({{"cough", "1"}, {"fever", "1"}}), o);
    CHECK(sick == FindingSet{"OpacityRegion", "Fever", "Cough"});

    // The probability mapping boundary is inclusive (>=).
    CHECK(pneumo::annotate_case(0.75, record_with({}), o) ==
          FindingSet{"OpacityRegion"});
    CHECK(pneumo::annotate_case(0.7499, record_with({}), o).empty());

    // Missing fields never fire; mismatched values never fire.
    CHECK(pneumo::annotate_case(0.1, record_with({{"cough", "0"}}), o).empty());
    const FindingSet cough_only =
        pneumo::annotate_case(0.1, record_with({{"cough", "1"}}), o);
    CHECK(cough_only == FindingSet{"Cough"});
}

TEST_CASE("numeric comparison operators behave numerically") {
    const Ontology o = pneumo::parse_ontology(
        "concept Infant\nconcept Senior\nconcept Tagged\n"
        "map age_months < 24 -> Infant\n"
        "map age_months >= 48 -> Senior\n"
        "map tag == hello -> Tagged\n");

    CHECK(pneumo::map_metadata_to_findings(record_with({}, 12), o) ==
          FindingSet{"Infant"});
    CHECK(pneumo::map_metadata_to_findings(record_with({}, 24), o).empty());
    CHECK(pneumo::map_metadata_to_findings(record_with({}, 48), o) ==
          FindingSet{"Senior"});
    // Numeric equality vs string comparison: "7.0" == 7 numerically.
    const Ontology eq = pneumo::parse_ontology(
        "concept Seven\nmap n == 7 -> Seven\n");
    CHECK(pneumo::map_metadata_to_findings(record_with({{"n", "7.0"}}), eq) ==
          FindingSet{"Seven"});
    // Non-numeric '==' falls back to exact string equality.
    CHECK(pneumo::map_metadata_to_findings(record_with({{"tag", "hello"}}), o) ==
          FindingSet{"Tagged"});
    CHECK(pneumo::map_metadata_to_findings(record_with({{"tag", "HELLO"}}), o).empty());
    // Ordered comparison against a non-numeric value cannot fire.
    CHECK(pneumo::map_metadata_to_findings(record_with({{"age_months", "young"}}), o).empty());

    // Record with no age: age_months rules cannot fire.
    CHECK(pneumo::map_metadata_to_findings(record_with({}), o).empty());
}

TEST_CASE("annotate_case validates the probability range") {
    const Ontology o = clinic();
    CHECK_THROWS_AS(pneumo::annotate_case(-0.1, record_with({}), o), pneumo::ValueError);
    CHECK_THROWS_AS(pneumo::annotate_case(1.1, record_with({}), o), pneumo::ValueError);
    CHECK_NOTHROW(pneumo::annotate_case(0.0, record_with({}), o));
    CHECK_NOTHROW(pneumo::annotate_case(1.0, record_with({}), o));
}

// ---------------------------------------------------------------------------
// Decision fusion
// ---------------------------------------------------------------------------

TEST_CASE("fusion requires both the probability and the ontology to agree") {
    const Ontology o = clinic();
    const FindingSet with_target = {"OpacityRegion", "Fever", "Cough"};
    const FindingSet without_target = {"Fever"};

    for (double p : {0.69, 0.70, 0.71}) {
        for (bool in_closure : {true, false}) {
            const FindingSet& asserted = in_closure ? with_target : without_target;
            const InferenceResult inf = pneumo::infer(o, asserted);
            CHECK(inf.closure.count("Pneumonia") == (in_closure ? 1u : 0u));
            const Diagnosis d = pneumo::fuse_decision(p, asserted, inf, o);
            const bool expect_hit = p > 0.7 && in_closure;
            CHECK(d.verdict == (expect_hit ? pneumo::kVerdictDetected
                                           : pneumo::kVerdictFurther));
        }
    }
}

TEST_CASE("fusion threshold is strict even at the exact boundary") {
    const Ontology o = clinic();
    const FindingSet asserted = {"OpacityRegion", "Fever", "Cough"};
    const InferenceResult inf = pneumo::infer(o, asserted);
    REQUIRE(inf.closure.count("Pneumonia") == 1);

    CHECK(pneumo::fuse_decision(0.7, asserted, inf, o).verdict ==
          pneumo::kVerdictFurther);
    CHECK(pneumo::fuse_decision(std::nextafter(0.7, 1.0), asserted, inf, o).verdict ==
          pneumo::kVerdictDetected);
    // Custom threshold.
    CHECK(pneumo::fuse_decision(0.65, asserted, inf, o, "Pneumonia", 0.6).verdict ==
          pneumo::kVerdictDetected);
}

TEST_CASE("fusion fills in the full diagnosis record") {
    const Ontology o = clinic();
    const FindingSet asserted = {"OpacityRegion", "Fever", "Cough"};
    const InferenceResult inf = pneumo::infer(o, asserted);
    const Diagnosis d = pneumo::fuse_decision(0.92, asserted, inf, o);
    CHECK(d.p_cnn == 0.92);
    CHECK(d.asserted == asserted);
    CHECK(d.inferred == inf.closure);
    CHECK(d.trace == std::vector<std::string>{"R2", "R1"});
    CHECK(d.verdict == pneumo::kVerdictDetected);
}

TEST_CASE("fusion rejects an undeclared target concept") {
    const Ontology o = clinic();
    const InferenceResult inf = pneumo::infer(o, {"Fever"});
    CHECK_THROWS_AS(pneumo::fuse_decision(0.9, {"Fever"}, inf, o, "Sepsis"),
                    pneumo::OntologyError);
}

TEST_CASE("diagnose_case runs the whole per-case pipeline") {
    const Ontology o = clinic();

    const Diagnosis hit = pneumo::diagnose_case(
        0.9, record_with({{"cough", "1"}, {"fever", "1"}}), o);
    CHECK(hit.verdict == pneumo::kVerdictDetected);
    CHECK(hit.asserted == FindingSet{"OpacityRegion", "Fever", "Cough"});
    CHECK(hit.inferred.count("Pneumonia") == 1);
    CHECK(hit.trace == std::vector<std::string>{"R2", "R1"});

    // High probability alone asserts OpacityRegion, but without the clinical
    // signs nothing derives Pneumonia.
    const Diagnosis solo = pneumo::diagnose_case(0.9, record_with({}), o);
    CHECK(solo.verdict == pneumo::kVerdictFurther);
    CHECK(solo.inferred.count("Pneumonia") == 0);

    // Clinical signs alone fail the probability test: p <= 0.7 and the
    // p_cnn mapping (0.75) never fires either.
    const Diagnosis signs = pneumo::diagnose_case(
        0.3, record_with({{"cough", "1"}, {"fever", "1"}}), o);
    CHECK(signs.verdict == pneumo::kVerdictFurther);
    CHECK(signs.inferred.count("Pneumonia") == 0);

    // p in (0.7, 0.75): conviction from the probability test but the mapping
    // has not fired, so the ontology side still lacks Pneumonia.
    const Diagnosis gap = pneumo::diagnose_case(
        0.72, record_with({{"cough", "1"}, {"fever", "1"}}), o);
    CHECK(gap.verdict == pneumo::kVerdictFurther);
}
