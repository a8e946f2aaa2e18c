#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <string>
#include <vector>

#include "disent/errors.hpp"
#include "disent/layers.hpp"

namespace disent {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw IoError("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw IoError("sha256 update failed");
  }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw IoError("sha256 final failed");
    static const char* k = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(k[digest[i] >> 4]);
      out.push_back(k[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(const void* data, std::size_t n) {
  Sha256 h;
  h.update(data, n);
  return h.hex();
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

// Digest of a parameter group in declaration order, covering names, shapes
// and values: the probe-isolation checks compare this before and after.
template <typename Real>
std::string hash_params(const std::vector<Param<Real>*>& params) {
  Sha256 h;
  for (const auto* p : params) {
    h.update(p->name.data(), p->name.size());
    const std::int32_t dims[2] = {p->rows, p->cols};
    h.update(dims, sizeof(dims));
    h.update(p->value.data(), p->value.size() * sizeof(Real));
  }
  return h.hex();
}

}  // namespace disent
