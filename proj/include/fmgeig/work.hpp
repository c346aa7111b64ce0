#pragma once

#include <cstdint>

namespace fmgeig {

/// Machine-independent work counters. One work unit is one traversed matrix entry.
struct WorkReport {
    std::uint64_t matvec_nonzeros = 0;   // sparse products, smoothers, triple products
    std::uint64_t assembly_nonzeros = 0; // element-local entries accumulated
    std::uint64_t factor_entries = 0;    // factorization / triangular-solve entries touched
    std::uint64_t assemblies = 0;
    std::uint64_t coarse_solves = 0;
    std::uint64_t scf_iterations = 0;
    std::uint64_t smoother_breakdowns = 0;

    std::uint64_t work_units() const noexcept {
        return matvec_nonzeros + assembly_nonzeros + factor_entries;
    }

    WorkReport& operator+=(const WorkReport& o) noexcept {
        matvec_nonzeros += o.matvec_nonzeros;
        assembly_nonzeros += o.assembly_nonzeros;
        factor_entries += o.factor_entries;
        assemblies += o.assemblies;
        coarse_solves += o.coarse_solves;
        scf_iterations += o.scf_iterations;
        smoother_breakdowns += o.smoother_breakdowns;
        return *this;
    }
};

inline WorkReport operator-(WorkReport a, const WorkReport& b) noexcept {
    a.matvec_nonzeros -= b.matvec_nonzeros;
    a.assembly_nonzeros -= b.assembly_nonzeros;
    a.factor_entries -= b.factor_entries;
    a.assemblies -= b.assemblies;
    a.coarse_solves -= b.coarse_solves;
    a.scf_iterations -= b.scf_iterations;
    a.smoother_breakdowns -= b.smoother_breakdowns;
    return a;
}

} // namespace fmgeig
