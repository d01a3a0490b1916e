#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freezetst/tensor.hpp"

namespace freezetst {

/// Incrementally hashes tensors into a SHA-256 hex digest. Values are fed as
/// raw little-endian IEEE-754 doubles in element order, so the digest is
/// stable across runs and platforms and changes iff any bit of any value
/// changes. Used to prove that frozen parameters never move during training.
class DigestBuilder {
public:
    DigestBuilder();
    ~DigestBuilder();
    DigestBuilder(const DigestBuilder&) = delete;
    DigestBuilder& operator=(const DigestBuilder&) = delete;

    void update_bytes(const void* data, std::size_t len);
    void update_double(double v);

    template <class Real>
    void update_tensor(const Tensor<Real>& t) {
        for (Index d : t.shape) {
            const std::uint64_t u = static_cast<std::uint64_t>(d);
            update_bytes(&u, sizeof(u));
        }
        for (Real v : t.data) update_double(static_cast<double>(v));
    }

    /// Finalises and returns 64 lowercase hex characters. One-shot.
    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(const void* data, std::size_t len);

}  // namespace freezetst
