/*
 * Copyright 2026 The Epitrace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <openssl/evp.h>

#include <initializer_list>
#include <memory>
#include <stdexcept>

#include "epitrace/bytes.hpp"

namespace epitrace {

using Digest = ByteArray<32>;

namespace detail {
// Explicit fetch once per process; implicit fetching costs several hundred
// nanoseconds per digest on OpenSSL 3.
inline const EVP_MD* sha256_md() {
  static const EVP_MD* md = [] {
    const EVP_MD* fetched = EVP_MD_fetch(nullptr, "SHA256", nullptr);
    return fetched ? fetched : EVP_sha256();
  }();
  return md;
}
}  // namespace detail

/// Incremental SHA-256 over OpenSSL's EVP interface.
///
/// Copyable: a copy snapshots the running state, which lets callers hash a
/// shared prefix once and finish many messages from it.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_) throw std::runtime_error("EVP_MD_CTX_new failed");
    reset();
  }

  /// Starts a fresh digest on the same context.
  Sha256& reset() {
    if (EVP_DigestInit_ex(ctx_.get(), detail::sha256_md(), nullptr) != 1) {
      throw std::runtime_error("EVP_DigestInit_ex failed");
    }
    return *this;
  }

  Sha256(const Sha256& other) : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_MD_CTX_copy_ex(ctx_.get(), other.ctx_.get()) != 1) {
      throw std::runtime_error("EVP_MD_CTX_copy_ex failed");
    }
  }

  Sha256& operator=(const Sha256& other) {
    if (this != &other && EVP_MD_CTX_copy_ex(ctx_.get(), other.ctx_.get()) != 1) {
      throw std::runtime_error("EVP_MD_CTX_copy_ex failed");
    }
    return *this;
  }

  Sha256(Sha256&&) noexcept = default;
  Sha256& operator=(Sha256&&) noexcept = default;

  Sha256& update(ByteView data) {
    if (EVP_DigestUpdate(ctx_.get(), data.data(), data.size()) != 1) {
      throw std::runtime_error("EVP_DigestUpdate failed");
    }
    return *this;
  }

  Sha256& update(std::string_view text) {
    return update(ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  Digest finish() {
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), out.data(), &len) != 1 || len != out.size()) {
      throw std::runtime_error("EVP_DigestFinal_ex failed");
    }
    return out;
  }

 private:
  struct CtxFree {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
  };
  std::unique_ptr<EVP_MD_CTX, CtxFree> ctx_;
};

inline Digest sha256(ByteView data) { return Sha256().update(data).finish(); }

}  // namespace epitrace
