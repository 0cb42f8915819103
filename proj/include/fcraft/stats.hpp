#pragma once

#include <cstdint>
#include <vector>

namespace fcraft::stats {

// Probability that a random positive outranks a random negative, with
// midranks for ties. Throws if either class is missing.
double mann_whitney_auc(const std::vector<double>& scores,
                        const std::vector<int>& labels);

// Rank correlation with midrank tie handling.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// FNV-1a over raw bytes; used for content-addressed caches and mutation
// checks, not for anything adversarial.
std::uint64_t hash_bytes(const void* data, std::size_t n,
                         std::uint64_t seed = 1469598103934665603ull);

}  // namespace fcraft::stats
