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

#include <cstdint>

// Generated by make_vectors.py from Python's hashlib and decimal.
namespace epitrace::oracle {

inline constexpr const char* kSha256Abc = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
inline constexpr const char* kSha256OfZeroSeed = "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925";
inline constexpr const char* kSecondSeedFromZero = "2b32db6c2c0a6235fb1397e8225ea85e0f0e6e8c7b126d0016ccbde0e667151e";
inline constexpr const char* kEphIdZeroSeedEpoch0 = "f7cd6badac08d13384a129510cd51830";
inline constexpr const char* kEphIdZeroSeedEpoch95 = "5f39ee09cece4158104916ce424e3e43";
inline constexpr const char* kEphIdOneSeedEpoch7 = "6cfb0ec18db98d7b548d09a93174e230";
inline constexpr const char* kReportWire = "0000000000000102000000020000000000000000000000000000000000000000000000000000000000000000abababababababababababababababababababababababababababababababab";
inline constexpr std::uint32_t kMaskZeroSeedWord0 = 2547040482u;
inline constexpr std::uint32_t kMaskZeroSeedWord1 = 1311755471u;
inline constexpr std::uint32_t kMaskAbSeedWord3 = 2723600245u;
inline constexpr const char* kContactDigestOfEpoch0Id = "b287744686ac1ab2caf282e76ec2f38d454d7fe848e7ee9eacb7e6c0ba75c2b2";
inline constexpr std::int64_t kGrid001Lat43p72 = 4372;
inline constexpr std::int64_t kGrid01LonMinus0p05 = -1;
inline constexpr std::int64_t kGrid0001Lat10p0005 = 10000;

}  // namespace epitrace::oracle
