// SPDX-License-Identifier: Apache-2.0
#include "cvm/dataio/colmap.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cvm/core/error.hpp"

namespace cvm::io {

namespace {

std::ifstream open(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot open " + p.string());
  return is;
}

bool is_comment(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos != std::string::npos && line[pos] == '#';
}

bool is_blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

}  // namespace

geo::Mat3 quaternion_to_rotation(double w, double x, double y, double z) {
  return Eigen::Quaterniond(w, x, y, z).toRotationMatrix();
}

ColmapModel parse_colmap_text(const std::filesystem::path& cameras_file, const std::filesystem::path& images_file) {
  ColmapModel model;
  {
    auto is = open(cameras_file);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (is_comment(line) || is_blank(line)) continue;
      std::istringstream ls(line);
      std::int64_t id = 0;
      std::string kind;
      geo::CameraIntrinsics k;
      ls >> id >> kind >> k.width >> k.height;
      if (!ls) throw DataError(cameras_file.string() + ":" + std::to_string(lineno) + ": malformed camera line");
      if (kind == "PINHOLE") {
        ls >> k.fx >> k.fy >> k.cx >> k.cy;
      } else if (kind == "SIMPLE_PINHOLE") {
        ls >> k.fx >> k.cx >> k.cy;
        k.fy = k.fx;
      } else {
        throw UnsupportedModelError("unsupported COLMAP camera model '" + kind + "' (camera " + std::to_string(id) +
                                    "); only PINHOLE and SIMPLE_PINHOLE are read");
      }
      if (!ls) throw DataError(cameras_file.string() + ":" + std::to_string(lineno) + ": missing camera parameters");
      model.cameras[id] = k;
    }
  }

  auto is = open(images_file);
  std::string line;
  std::int64_t lineno = 0;
  bool expect_points = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (is_comment(line)) continue;
    if (expect_points) {  // POINTS2D line, possibly empty
      expect_points = false;
      continue;
    }
    if (is_blank(line)) continue;
    std::istringstream ls(line);
    ColmapImage img;
    double qw, qx, qy, qz, tx, ty, tz;
    std::string name;
    ls >> img.image_id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> img.camera_id >> name;
    if (!ls || name.empty())
      throw DataError(images_file.string() + ":" + std::to_string(lineno) + ": malformed image line");
    const double norm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (!(norm > 0)) throw DataError(images_file.string() + ":" + std::to_string(lineno) + ": zero quaternion");
    if (std::abs(norm - 1.0) > 1e-6) {
      model.warnings.push_back("image " + name + ": quaternion norm " + std::to_string(norm) + " renormalised");
      qw /= norm;
      qx /= norm;
      qy /= norm;
      qz /= norm;
    }
    const auto cam = model.cameras.find(img.camera_id);
    if (cam == model.cameras.end())
      throw DataError("image " + name + " refers to unknown camera " + std::to_string(img.camera_id));
    img.camera.intrinsics = cam->second;
    img.camera.pose.rotation = quaternion_to_rotation(qw, qx, qy, qz);
    img.camera.pose.translation = geo::Vec3(tx, ty, tz);
    model.images[name] = img;
    expect_points = true;
  }
  return model;
}

void write_colmap_text(const std::filesystem::path& cameras_file, const std::filesystem::path& images_file,
                       const ColmapModel& model) {
  std::ofstream cs(cameras_file, std::ios::trunc);
  if (!cs) throw IoError("cannot write " + cameras_file.string());
  cs << std::setprecision(17) << "# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
  for (const auto& [id, k] : model.cameras)
    cs << id << " PINHOLE " << k.width << ' ' << k.height << ' ' << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy
       << '\n';
  std::ofstream ims(images_file, std::ios::trunc);
  if (!ims) throw IoError("cannot write " + images_file.string());
  ims << std::setprecision(17) << "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[]\n";
  for (const auto& [name, img] : model.images) {
    const Eigen::Quaterniond q(img.camera.pose.rotation);
    const auto& t = img.camera.pose.translation;
    ims << img.image_id << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << t.x() << ' '
        << t.y() << ' ' << t.z() << ' ' << img.camera_id << ' ' << name << "\n\n";
  }
  if (!cs || !ims) throw IoError("failed writing COLMAP model");
}

}  // namespace cvm::io
