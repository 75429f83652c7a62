#ifndef PNEUMO_ONTOLOGY_HPP
#define PNEUMO_ONTOLOGY_HPP

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pneumo/sample.hpp"

namespace pneumo {

// ---------------------------------------------------------------------------
// Ontology text format, one declaration per line ('#' starts a comment):
//     concept <Name>
//     isa <Child> <Parent>
//     rule <Name>: <A> & <B> & ... => <Head>
//     map <field> <op> <value> -> <Concept>     op in { <= >= < > == }
// Every concept referenced by isa/rule/map lines must be declared, and the
// is-a graph must be acyclic. Violations raise ParseError with line numbers.
// ---------------------------------------------------------------------------

struct HornRule {
    std::string name;
    std::vector<std::string> body; // conjunction of concepts
    std::string head;
};

enum class MapOp { Le, Ge, Lt, Gt, Eq };

struct MappingRule {
    std::string field;   // "p_cnn", "age_months", or a metadata key
    MapOp op = MapOp::Eq;
    std::string value;        // right-hand side as written
    std::string concept_name; // asserted when the predicate holds
};

struct Ontology {
    std::vector<std::string> concepts; // declaration order
    std::vector<std::pair<std::string, std::string>> isa; // child -> parent
    std::vector<HornRule> rules;
    std::vector<MappingRule> mappings;

    bool has_concept(const std::string& name) const;
};

Ontology parse_ontology(const std::string& text, const std::string& source = "<memory>");
Ontology parse_ontology_file(const std::string& path);

// Ordered set => deterministic iteration and printing.
using FindingSet = std::set<std::string>;

struct InferenceResult {
    FindingSet closure;              // findings plus everything derivable
    std::vector<std::string> trace;  // Horn rule names in firing order
};

// Forward chaining to the least fixpoint: is-a ancestors of every held
// concept are held, and a rule whose body is held asserts its head. A rule
// name enters the trace only when its head is newly derived. Monotone,
// idempotent, and independent of rule declaration order.
InferenceResult infer(const Ontology& ontology, const FindingSet& findings);

// Evaluate every mapping rule against the record's fields (age_months plus
// metadata keys). Missing fields make a predicate false. Numeric comparisons
// require both sides to parse fully as numbers; '==' falls back to string
// equality otherwise.
FindingSet map_metadata_to_findings(const SampleRecord& record,
                                    const Ontology& ontology);

// Same, with the network probability exposed as field "p_cnn".
FindingSet annotate_case(double p_cnn, const SampleRecord& record,
                         const Ontology& ontology);

inline constexpr const char* kVerdictDetected = "Pneumonia detected";
inline constexpr const char* kVerdictFurther = "Further investigation required";

struct Diagnosis {
    double p_cnn = 0.0;
    FindingSet asserted;
    FindingSet inferred;
    std::vector<std::string> trace;
    std::string verdict;
};

// Decision fusion: "Pneumonia detected" only when the network probability
// strictly exceeds the threshold AND the target concept is in the closure;
// otherwise "Further investigation required".
Diagnosis fuse_decision(double p_cnn, const FindingSet& asserted,
                        const InferenceResult& inference,
                        const Ontology& ontology,
                        const std::string& target = "Pneumonia",
                        double threshold = 0.7);

// Full per-case pipeline: annotate, infer, fuse.
Diagnosis diagnose_case(double p_cnn, const SampleRecord& record,
                        const Ontology& ontology,
                        const std::string& target = "Pneumonia",
                        double threshold = 0.7);

} // namespace pneumo

#endif
