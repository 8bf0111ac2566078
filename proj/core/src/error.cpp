// Copyright 2026 The TrojanLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "trojanlab/error.hpp"

#include <cmath>

#include "trojanlab/rng.hpp"

namespace trojanlab {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::OccupiedCell: return "OccupiedCell";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::NothingHeld: return "NothingHeld";
    case ErrorKind::AlreadyHolding: return "AlreadyHolding";
    case ErrorKind::UnknownObject: return "UnknownObject";
    case ErrorKind::InvalidScene: return "InvalidScene";
    case ErrorKind::InvalidCamera: return "InvalidCamera";
    case ErrorKind::UnparseableInstruction: return "UnparseableInstruction";
    case ErrorKind::ObjectNotFound: return "ObjectNotFound";
    case ErrorKind::MissingLocation: return "MissingLocation";
    case ErrorKind::StageFailure: return "StageFailure";
    case ErrorKind::ExtractionFailed: return "ExtractionFailed";
    case ErrorKind::ArityMismatch: return "ArityMismatch";
    case ErrorKind::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorKind::MalformedProviderReply: return "MalformedProviderReply";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnknownToken: return "UnknownToken";
    case ErrorKind::DecodeOverflow: return "DecodeOverflow";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::BadModelFile: return "BadModelFile";
    case ErrorKind::IndivisiblePartition: return "IndivisiblePartition";
    case ErrorKind::NoFreeCell: return "NoFreeCell";
    case ErrorKind::TargetCollision: return "TargetCollision";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::InvalidDefense: return "InvalidDefense";
    case ErrorKind::EmptyResults: return "EmptyResults";
    case ErrorKind::NoApplicableTrials: return "NoApplicableTrials";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ProviderError: return "ProviderError";
    case ErrorKind::AuthError: return "AuthError";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::RateLimited: return "RateLimited";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::ImageTooLarge: return "ImageTooLarge";
    case ErrorKind::TransportForbidden: return "TransportForbidden";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

}  // namespace trojanlab
