#pragma once

#include <compare>
#include <optional>
#include <string>
#include <vector>

namespace formlab {

/// Strictly increasing list of axes (1-based) indexing a k-form component
/// dx_I = dx_{i1} ^ ... ^ dx_{ik} in ambient dimension n.
class MultiIndex {
public:
    MultiIndex() = default;
    /// Throws std::invalid_argument unless axes are strictly increasing in [1, n].
    MultiIndex(int n, std::vector<int> axes);

    static MultiIndex empty(int n) { return MultiIndex(n, {}); }
    static MultiIndex full(int n);
    /// All k-subsets of {1..n} in lexicographic order.
    static std::vector<MultiIndex> all(int n, int k);

    int dim() const { return n_; }
    int degree() const { return static_cast<int>(axes_.size()); }
    const std::vector<int>& axes() const { return axes_; }
    bool contains(int axis) const;
    /// Position of this index in all(n, k).
    int rank() const;
    std::string str() const;

    auto operator<=>(const MultiIndex&) const = default;
    bool operator==(const MultiIndex&) const = default;

private:
    int n_ = 0;
    std::vector<int> axes_;
};

struct SignedIndex {
    MultiIndex index;
    int sign = 1;
};

/// Complementary index I' and the parity of the permutation (I, I') of 1..n.
SignedIndex complement(const MultiIndex& index);

/// Sorts an arbitrary axis tuple into a MultiIndex, tracking the permutation
/// sign. Returns nullopt when an axis repeats (the wedge vanishes).
std::optional<SignedIndex> normalize_axes(int n, std::vector<int> axes);

/// Sign of the permutation taking `axes` to sorted order (0 if repeated).
int permutation_sign(std::vector<int> axes);

/// Binomial coefficient C(n, k) for small arguments.
int binomial(int n, int k);

}  // namespace formlab
