#pragma once

#include <stdexcept>
#include <string>

namespace mtc {

// Base class for everything this library throws on bad input or bad state.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyInput : Error {
    EmptyInput() : Error("empty expression") {}
};

// Malformed expression text. `position` is a byte offset into the input.
struct SyntaxError : Error {
    std::size_t position;
    std::string expected;
    SyntaxError(std::size_t pos, const std::string& what_expected)
        : Error("syntax error at position " + std::to_string(pos) + ": expected " + what_expected),
          position(pos),
          expected(what_expected) {}
};

struct DivisionByZero : Error {
    std::string where;
    explicit DivisionByZero(const std::string& subexpr)
        : Error("division by zero in " + subexpr), where(subexpr) {}
};

struct NonNumericExponent : Error {
    explicit NonNumericExponent(const std::string& detail)
        : Error("non-numeric exponent: " + detail) {}
};

// Exponent outside the supported range (nonnegative integer literals <= 12).
struct UnsupportedExponent : Error {
    explicit UnsupportedExponent(const std::string& detail)
        : Error("unsupported exponent: " + detail) {}
};

struct UnknownCode : Error {
    std::string code;
    int occurrence;
    UnknownCode(const std::string& c, int occ)
        : Error("code \"" + c + "\" for value occurrence " + std::to_string(occ) +
                " is not in the vocabulary"),
          code(c),
          occurrence(occ) {}
};

struct EmptyTree : Error {
    EmptyTree() : Error("no non-None codes: nothing to decode") {}
};

struct InconsistentPath : Error {
    explicit InconsistentPath(const std::string& detail)
        : Error("inconsistent code paths: " + detail) {}
};

struct InvalidRoot : Error {
    explicit InvalidRoot(const std::string& code)
        : Error("code path does not start at a \"+\" root: " + code) {}
};

struct UnboundLiteral : Error {
    double value;
    explicit UnboundLiteral(double v, const std::string& literal)
        : Error("expression literal " + literal + " matches no value in the problem"), value(v) {}
};

struct SchemaError : Error {
    SchemaError(const std::string& record_id, const std::string& field)
        : Error("record " + record_id + ": missing or malformed field \"" + field + "\"") {}
};

struct IoError : Error {
    explicit IoError(const std::string& path) : Error("cannot open " + path) {}
};

struct PositionOutOfRange : Error {
    explicit PositionOutOfRange(int q, int n)
        : Error("value position " + std::to_string(q) + " outside sequence of length " +
                std::to_string(n)) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& detail) : Error("shape mismatch: " + detail) {}
};

struct DivergenceDetected : Error {
    explicit DivergenceDetected(const std::string& detail)
        : Error("training diverged: " + detail) {}
};

}  // namespace mtc
