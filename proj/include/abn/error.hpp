#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace abn {

enum class Errc {
    MissingValue,
    UnknownColumn,
    MissingSpec,
    LevelMismatch,
    IndexOutOfRange,
    IllegalParent,
    ConstraintConflict,
    NotConverged,
    Diverged,
    RankDeficient,
    Unfittable,
    IncompleteCache,
    KTooLarge,
    CyclicDag,
    NodeMismatch,
    Precondition,
    Parse,
    Io,
};

std::string_view to_string(Errc code);

// Every library failure carries one of the codes above. The CLI maps all of
// them to exit status 1 (bad input); anything else escaping is an internal
// error.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace abn
