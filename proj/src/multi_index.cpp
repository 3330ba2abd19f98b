#include "formlab/multi_index.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace formlab {

MultiIndex::MultiIndex(int n, std::vector<int> axes) : n_(n), axes_(std::move(axes)) {
    if (n < 0) throw std::invalid_argument("MultiIndex: negative dimension");
    if (static_cast<int>(axes_.size()) > n) throw std::invalid_argument("MultiIndex: degree exceeds dimension");
    for (std::size_t a = 0; a < axes_.size(); ++a) {
        if (axes_[a] < 1 || axes_[a] > n) {
            throw std::invalid_argument("MultiIndex: axis " + std::to_string(axes_[a]) + " outside [1," +
                                        std::to_string(n) + "]");
        }
        if (a > 0 && axes_[a] <= axes_[a - 1]) throw std::invalid_argument("MultiIndex: axes not strictly increasing");
    }
}

MultiIndex MultiIndex::full(int n) {
    std::vector<int> axes(static_cast<std::size_t>(n));
    std::iota(axes.begin(), axes.end(), 1);
    return MultiIndex(n, std::move(axes));
}

std::vector<MultiIndex> MultiIndex::all(int n, int k) {
    std::vector<MultiIndex> out;
    if (k < 0 || k > n) return out;
    std::vector<int> cur(static_cast<std::size_t>(k));
    std::iota(cur.begin(), cur.end(), 1);
    while (true) {
        out.emplace_back(n, cur);
        int pos = k - 1;
        while (pos >= 0 && cur[static_cast<std::size_t>(pos)] == n - k + pos + 1) --pos;
        if (pos < 0) break;
        ++cur[static_cast<std::size_t>(pos)];
        for (int q = pos + 1; q < k; ++q) cur[static_cast<std::size_t>(q)] = cur[static_cast<std::size_t>(q - 1)] + 1;
    }
    return out;
}

bool MultiIndex::contains(int axis) const { return std::binary_search(axes_.begin(), axes_.end(), axis); }

int MultiIndex::rank() const {
    // combinatorial number system over lexicographic order
    int r = 0;
    int prev = 0;
    const int k = degree();
    for (int a = 0; a < k; ++a) {
        for (int v = prev + 1; v < axes_[static_cast<std::size_t>(a)]; ++v) r += binomial(n_ - v, k - a - 1);
        prev = axes_[static_cast<std::size_t>(a)];
    }
    return r;
}

std::string MultiIndex::str() const {
    std::string s = "(";
    for (std::size_t a = 0; a < axes_.size(); ++a) {
        if (a) s += ",";
        s += std::to_string(axes_[a]);
    }
    return s + ")";
}

int permutation_sign(std::vector<int> axes) {
    int sign = 1;
    for (std::size_t i = 0; i < axes.size(); ++i) {
        for (std::size_t j = i + 1; j < axes.size(); ++j) {
            if (axes[i] == axes[j]) return 0;
            if (axes[i] > axes[j]) sign = -sign;
        }
    }
    return sign;
}

std::optional<SignedIndex> normalize_axes(int n, std::vector<int> axes) {
    const int sign = permutation_sign(axes);
    if (sign == 0) return std::nullopt;
    std::sort(axes.begin(), axes.end());
    return SignedIndex{MultiIndex(n, std::move(axes)), sign};
}

SignedIndex complement(const MultiIndex& index) {
    std::vector<int> rest;
    for (int a = 1; a <= index.dim(); ++a) {
        if (!index.contains(a)) rest.push_back(a);
    }
    std::vector<int> perm = index.axes();
    perm.insert(perm.end(), rest.begin(), rest.end());
    return SignedIndex{MultiIndex(index.dim(), std::move(rest)), permutation_sign(perm)};
}

int binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return static_cast<int>(r);
}

}  // namespace formlab
