import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";

/**
 * Orbitable 3D view of a point-cloud payload (flat little-endian float32
 * N x 3 as served by /model/{id}/points). Renders exactly the geometry the
 * model saw: normalized points, no meshing.
 */
export function createPointCloudViewer(
  container: HTMLElement,
  points: Float32Array,
): { dispose: () => void } {
  const width = container.clientWidth || 480;
  const height = container.clientHeight || 360;

  const scene = new THREE.Scene();
  scene.background = new THREE.Color(0x101318);
  const camera = new THREE.PerspectiveCamera(50, width / height, 0.01, 100);
  camera.position.set(1.6, 1.2, 1.6);

  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position", new THREE.BufferAttribute(points, 3));
  const material = new THREE.PointsMaterial({ color: 0x7ec8ff, size: 0.02 });
  scene.add(new THREE.Points(geometry, material));
  scene.add(new THREE.AxesHelper(0.5));

  const renderer = new THREE.WebGLRenderer({ antialias: true });
  renderer.setSize(width, height);
  container.appendChild(renderer.domElement);

  const controls = new OrbitControls(camera, renderer.domElement);
  controls.enableDamping = true;

  let disposed = false;
  const animate = () => {
    if (disposed) return;
    requestAnimationFrame(animate);
    controls.update();
    renderer.render(scene, camera);
  };
  animate();

  return {
    dispose() {
      disposed = true;
      controls.dispose();
      geometry.dispose();
      material.dispose();
      renderer.dispose();
      renderer.domElement.remove();
    },
  };
}
