#include "pneumo/ontology.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "pneumo/errors.hpp"

namespace pneumo {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> tokenize(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& what) {
    throw ParseError("ontology " + source + " line " + std::to_string(line) + ": " + what);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

struct Declared {
    std::string source;
    // concept name -> declaration line; isa edges carry their line for cycle reports
    std::map<std::string, int> lines;
};

void require_declared(const Declared& d, const std::string& name, int line,
                      const char* role) {
    if (d.lines.find(name) == d.lines.end())
        fail(d.source, line, std::string("undeclared concept '") + name + "' in " + role);
}

// Depth-first search for a cycle in the is-a graph; reports the first edge
// that closes one, with the line it was declared on.
void check_acyclic(const Ontology& o, const Declared& d,
                   const std::vector<int>& isa_lines) {
    std::map<std::string, std::vector<std::size_t>> out_edges;
    for (std::size_t i = 0; i < o.isa.size(); ++i)
        out_edges[o.isa[i].first].push_back(i);

    enum class Color { White, Gray, Black };
    std::map<std::string, Color> color;
    for (const auto& c : o.concepts) color[c] = Color::White;

    struct Frame {
        std::string node;
        std::size_t next = 0;
    };
    for (const auto& start : o.concepts) {
        if (color[start] != Color::White) continue;
        std::vector<Frame> stack{{start, 0}};
        color[start] = Color::Gray;
        while (!stack.empty()) {
            Frame& f = stack.back();
            const auto& edges = out_edges[f.node];
            if (f.next < edges.size()) {
                const std::size_t ei = edges[f.next++];
                const std::string& parent = o.isa[ei].second;
                if (color[parent] == Color::Gray)
                    fail(d.source, isa_lines[ei],
                         "is-a cycle through '" + parent + "'");
                if (color[parent] == Color::White) {
                    color[parent] = Color::Gray;
                    stack.push_back({parent, 0});
                }
            } else {
                color[f.node] = Color::Black;
                stack.pop_back();
            }
        }
    }
}

} // namespace

bool Ontology::has_concept(const std::string& name) const {
    return std::find(concepts.begin(), concepts.end(), name) != concepts.end();
}

Ontology parse_ontology(const std::string& text, const std::string& source) {
    Ontology o;
    Declared declared{source, {}};
    std::vector<int> isa_lines;
    // deferred reference checks: (name, line, role)
    std::vector<std::tuple<std::string, int, const char*>> refs;

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;

        const auto tokens = tokenize(stripped);
        const std::string& kw = tokens[0];

        if (kw == "concept") {
            if (tokens.size() != 2 || !valid_name(tokens[1]))
                fail(source, line_no, "expected 'concept <Name>'");
            if (declared.lines.count(tokens[1]))
                fail(source, line_no, "duplicate concept '" + tokens[1] + "'");
            declared.lines[tokens[1]] = line_no;
            o.concepts.push_back(tokens[1]);
        } else if (kw == "isa") {
            if (tokens.size() != 3 || !valid_name(tokens[1]) || !valid_name(tokens[2]))
                fail(source, line_no, "expected 'isa <Child> <Parent>'");
            if (tokens[1] == tokens[2])
                fail(source, line_no, "is-a cycle through '" + tokens[1] + "'");
            o.isa.emplace_back(tokens[1], tokens[2]);
            isa_lines.push_back(line_no);
            refs.emplace_back(tokens[1], line_no, "isa");
            refs.emplace_back(tokens[2], line_no, "isa");
        } else if (kw == "rule") {
            // rule Name: A & B => C
            const auto colon = stripped.find(':');
            if (colon == std::string::npos)
                fail(source, line_no, "rule is missing ':'");
            const std::string name = trim(stripped.substr(4, colon - 4));
            if (!valid_name(name)) fail(source, line_no, "bad rule name '" + name + "'");
            const std::string rest = stripped.substr(colon + 1);
            const auto arrow = rest.find("=>");
            if (arrow == std::string::npos)
                fail(source, line_no, "rule is missing '=>'");
            HornRule rule;
            rule.name = name;
            std::string body = rest.substr(0, arrow);
            for (std::string part : [&] {
                     std::vector<std::string> parts;
                     std::size_t start = 0;
                     for (;;) {
                         const auto amp = body.find('&', start);
                         parts.push_back(body.substr(start, amp - start));
                         if (amp == std::string::npos) break;
                         start = amp + 1;
                     }
                     return parts;
                 }()) {
                part = trim(part);
                if (!valid_name(part))
                    fail(source, line_no, "bad rule body concept '" + part + "'");
                rule.body.push_back(part);
                refs.emplace_back(part, line_no, "rule body");
            }
            rule.head = trim(rest.substr(arrow + 2));
            if (!valid_name(rule.head))
                fail(source, line_no, "bad rule head '" + rule.head + "'");
            refs.emplace_back(rule.head, line_no, "rule head");
            for (const HornRule& existing : o.rules)
                if (existing.name == rule.name)
                    fail(source, line_no, "duplicate rule name '" + rule.name + "'");
            o.rules.push_back(std::move(rule));
        } else if (kw == "map") {
            // map field op value -> Concept
            if (tokens.size() != 6 || tokens[4] != "->")
                fail(source, line_no, "expected 'map <field> <op> <value> -> <Concept>'");
            MappingRule m;
            m.field = tokens[1];
            const std::string& op = tokens[2];
            if (op == "<=") m.op = MapOp::Le;
            else if (op == ">=") m.op = MapOp::Ge;
            else if (op == "<") m.op = MapOp::Lt;
            else if (op == ">") m.op = MapOp::Gt;
            else if (op == "==") m.op = MapOp::Eq;
            else fail(source, line_no, "unknown operator '" + op + "'");
            m.value = tokens[3];
            m.concept_name = tokens[5];
            if (!valid_name(m.concept_name))
                fail(source, line_no, "bad mapping concept '" + m.concept_name + "'");
            refs.emplace_back(m.concept_name, line_no, "mapping");
            o.mappings.push_back(std::move(m));
        } else {
            fail(source, line_no, "unknown declaration '" + kw + "'");
        }
    }

    for (const auto& [name, ref_line, role] : refs)
        require_declared(declared, name, ref_line, role);
    check_acyclic(o, declared, isa_lines);
    return o;
}

Ontology parse_ontology_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ontology " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_ontology(buf.str(), path);
}

namespace {

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

bool predicate_holds(const MappingRule& m, const std::string& field_value) {
    double lhs = 0.0, rhs = 0.0;
    const bool numeric = parse_number(field_value, lhs) && parse_number(m.value, rhs);
    switch (m.op) {
        case MapOp::Le: return numeric && lhs <= rhs;
        case MapOp::Ge: return numeric && lhs >= rhs;
        case MapOp::Lt: return numeric && lhs < rhs;
        case MapOp::Gt: return numeric && lhs > rhs;
        case MapOp::Eq: return numeric ? lhs == rhs : field_value == m.value;
    }
    return false;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

FindingSet evaluate_mappings(const Ontology& ontology,
                             const std::map<std::string, std::string>& fields) {
    FindingSet out;
    for (const MappingRule& m : ontology.mappings) {
        const auto it = fields.find(m.field);
        if (it == fields.end()) continue; // missing field => predicate is false
        if (predicate_holds(m, it->second)) out.insert(m.concept_name);
    }
    return out;
}

std::map<std::string, std::string> record_fields(const SampleRecord& record) {
    std::map<std::string, std::string> fields;
    if (record.age_months)
        fields["age_months"] = std::to_string(*record.age_months);
    for (const auto& [k, v] : record.metadata) fields[k] = v;
    return fields;
}

} // namespace

FindingSet map_metadata_to_findings(const SampleRecord& record,
                                    const Ontology& ontology) {
    return evaluate_mappings(ontology, record_fields(record));
}

FindingSet annotate_case(double p_cnn, const SampleRecord& record,
                         const Ontology& ontology) {
    if (!(p_cnn >= 0.0) || !(p_cnn <= 1.0))
        throw ValueError("p_cnn must be in [0, 1]");
    auto fields = record_fields(record);
    fields["p_cnn"] = format_double(p_cnn);
    return evaluate_mappings(ontology, fields);
}

InferenceResult infer(const Ontology& ontology, const FindingSet& findings) {
    for (const auto& f : findings)
        if (!ontology.has_concept(f))
            throw ValueError("unknown finding '" + f + "'");

    std::map<std::string, std::vector<std::string>> parents;
    for (const auto& [child, parent] : ontology.isa)
        parents[child].push_back(parent);

    InferenceResult result;
    auto add_with_ancestors = [&](const std::string& name) {
        std::vector<std::string> stack{name};
        while (!stack.empty()) {
            std::string cur = std::move(stack.back());
            stack.pop_back();
            if (!result.closure.insert(cur).second) continue;
            const auto it = parents.find(cur);
            if (it != parents.end())
                for (const auto& p : it->second) stack.push_back(p);
        }
    };

    for (const auto& f : findings) add_with_ancestors(f);

    bool changed = true;
    while (changed) {
        changed = false;
        for (const HornRule& rule : ontology.rules) {
            if (result.closure.count(rule.head)) continue;
            const bool satisfied =
                std::all_of(rule.body.begin(), rule.body.end(),
                            [&](const std::string& c) {
                                return result.closure.count(c) != 0;
                            });
            if (satisfied) {
                add_with_ancestors(rule.head);
                result.trace.push_back(rule.name);
                changed = true;
            }
        }
    }
    return result;
}

Diagnosis fuse_decision(double p_cnn, const FindingSet& asserted,
                        const InferenceResult& inference,
                        const Ontology& ontology, const std::string& target,
                        double threshold) {
    if (!ontology.has_concept(target))
        throw OntologyError("target concept '" + target + "' is not declared");
    Diagnosis d;
    d.p_cnn = p_cnn;
    d.asserted = asserted;
    d.inferred = inference.closure;
    d.trace = inference.trace;
    const bool hit = p_cnn > threshold && inference.closure.count(target) != 0;
    d.verdict = hit ? kVerdictDetected : kVerdictFurther;
    return d;
}

Diagnosis diagnose_case(double p_cnn, const SampleRecord& record,
                        const Ontology& ontology, const std::string& target,
                        double threshold) {
    const FindingSet asserted = annotate_case(p_cnn, record, ontology);
    const InferenceResult inference = infer(ontology, asserted);
    return fuse_decision(p_cnn, asserted, inference, ontology, target, threshold);
}

} // namespace pneumo
