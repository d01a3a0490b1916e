#include "freezetst/digest.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <stdexcept>

namespace freezetst {

namespace {

std::string to_hex(const unsigned char* buf, unsigned len) {
    static const char* digits = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = digits[buf[i] >> 4];
        out[2 * i + 1] = digits[buf[i] & 0xf];
    }
    return out;
}

}  // namespace

DigestBuilder::DigestBuilder() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 init failed");
}

DigestBuilder::~DigestBuilder() {
    if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void DigestBuilder::update_bytes(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1)
        throw std::runtime_error("sha256 update failed");
}

void DigestBuilder::update_double(double v) {
    static_assert(sizeof(double) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    update_bytes(le, 8);
}

std::string DigestBuilder::hex() {
    unsigned char buf[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), buf, &len) != 1)
        throw std::runtime_error("sha256 final failed");
    return to_hex(buf, len);
}

std::string sha256_hex(const void* data, std::size_t len) {
    DigestBuilder b;
    b.update_bytes(data, len);
    return b.hex();
}

}  // namespace freezetst
