// SPDX-License-Identifier: Apache-2.0
//
// COLMAP text model (cameras.txt / images.txt). Poses are kept in COLMAP's own
// convention: world-to-camera, quaternion stored scalar first. Intrinsic values
// are taken verbatim; COLMAP puts the centre of the top-left pixel at (0.5, 0.5)
// while this library puts it at (0, 0), so callers mixing both subtract 0.5
// from cx and cy.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cvm/geometry/geometry.hpp"

namespace cvm::io {

struct ColmapImage {
  std::int64_t image_id = 0;
  std::int64_t camera_id = 0;
  geo::Camera camera;  // intrinsics of camera_id, world-to-camera pose
};

struct ColmapModel {
  std::map<std::string, ColmapImage> images;  // keyed by image name
  std::map<std::int64_t, geo::CameraIntrinsics> cameras;
  std::vector<std::string> warnings;  // e.g. renormalised quaternions
};

/// Rotation of a unit quaternion (w, x, y, z).
geo::Mat3 quaternion_to_rotation(double w, double x, double y, double z);

/// Throws UnsupportedModelError for camera models other than PINHOLE and
/// SIMPLE_PINHOLE, DataError for malformed lines or unknown camera ids, IoError
/// for unreadable files. Quaternions off unit length by more than 1e-6 are
/// normalised and reported in warnings.
ColmapModel parse_colmap_text(const std::filesystem::path& cameras_file, const std::filesystem::path& images_file);

/// Writes PINHOLE cameras and images with empty point lines.
void write_colmap_text(const std::filesystem::path& cameras_file, const std::filesystem::path& images_file,
                       const ColmapModel& model);

}  // namespace cvm::io
