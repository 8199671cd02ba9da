"""
Visualization tools for tracks, reconstructions and the focal sweep.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib.pyplot as plt
import numpy as np

from graph import NeighborGraph
from tracks import Reconstruction, TrackSet

logger = logging.getLogger(__name__)


class ReconstructionVisualizer:
    """Plots observations and reconstructed points."""

    def __init__(self, figsize=(10, 8)):
        """
        Initialize visualizer.

        Args:
            figsize: Figure size (width, height) in inches
        """
        self.figsize = figsize

    def plot_tracks(
        self,
        tracks: TrackSet,
        view: int = 0,
        graph: Optional[NeighborGraph] = None,
        title: Optional[str] = None,
        y_axis_down: bool = True,
    ):
        """
        Plot the visible pixels of one view, with the neighbor graph edges.

        Args:
            tracks: Observations
            view: View to draw
            graph: Neighbor graph to overlay (edges with both ends visible)
            title: Plot title
            y_axis_down: Image convention (row index grows downwards)
        """
        fig, ax = plt.subplots(figsize=self.figsize)
        px = tracks.pixels[view]
        vis = tracks.visible[view]

        if graph is not None:
            for i, j in graph.edges():
                if vis[i] and vis[j]:
                    ax.plot(px[[i, j], 0], px[[i, j], 1], color='lightgray', linewidth=0.8, zorder=1)

        ax.scatter(px[vis, 0], px[vis, 1], s=12, c='tab:blue', zorder=2)
        ax.set_aspect('equal')
        ax.set_xlabel('x (px)')
        ax.set_ylabel('y (px)')
        ax.set_title(title or f"View {view}: {int(vis.sum())} visible points")
        ax.grid(True, alpha=0.3)
        if y_axis_down:
            ax.invert_yaxis()

        plt.tight_layout()
        return fig, ax

    def plot_points(
        self,
        recon: Reconstruction,
        views: Optional[Sequence[int]] = None,
        title: str = "Reconstruction",
        ground_truth: Optional[np.ndarray] = None,
    ):
        """
        Plot reconstructed 3D points of one or more views.

        Args:
            recon: Reconstruction
            views: Views to draw (default: all)
            title: Plot title
            ground_truth: Optional (V, N, 3) reference points drawn as crosses
        """
        fig = plt.figure(figsize=self.figsize)
        ax = fig.add_subplot(projection='3d')
        views = range(recon.tracks.num_views) if views is None else views
        colors = plt.cm.viridis(np.linspace(0, 1, max(len(views), 2)))

        X = recon.points()
        for n, view in enumerate(views):
            P = X[view][recon.tracks.visible[view]]
            ax.scatter(P[:, 0], P[:, 1], P[:, 2], s=6, color=colors[n], label=f'View {view}')
            if ground_truth is not None:
                G = ground_truth[view][recon.tracks.visible[view]]
                ax.scatter(G[:, 0], G[:, 1], G[:, 2], s=10, marker='x', color=colors[n], alpha=0.4)

        ax.set_xlabel('X')
        ax.set_ylabel('Y')
        ax.set_zlabel('Z (depth)')
        ax.set_title(title)
        if len(views) <= 10:
            ax.legend(loc='upper right', fontsize=7)

        plt.tight_layout()
        return fig, ax

    def plot_sweep(self, history: Sequence, true_focal: Optional[float] = None,
                   title: str = "Focal length sweep"):
        """
        Plot guess and refined focal length per sweep iteration, with the
        consistency cost on a second axis.

        Args:
            history: SweepRecord entries
            true_focal: Ground-truth focal length to mark
            title: Plot title
        """
        fig, ax = plt.subplots(figsize=self.figsize)
        it = [h.iteration for h in history]
        ax.plot(it, [h.focal_guess for h in history], 'o-', label='guess')
        ax.plot(it, [h.focal_refined for h in history], 's--', label='refined')
        if true_focal is not None:
            ax.axhline(true_focal, color='red', linestyle=':', label='ground truth')
        ax.set_xlabel('Iteration')
        ax.set_ylabel('Focal length (px)')
        ax.set_title(title)
        ax.grid(True, alpha=0.3)

        cost = ax.twinx()
        cost.semilogy(it, [max(h.phi, 1e-300) for h in history], color='gray', alpha=0.6, label='consistency')
        cost.set_ylabel('Consistency cost')

        lines = ax.get_legend_handles_labels()
        extra = cost.get_legend_handles_labels()
        ax.legend(lines[0] + extra[0], lines[1] + extra[1], loc='upper right')

        plt.tight_layout()
        return fig, ax

    def save_plot(self, filename: str, fig=None):
        """Save a figure (default: the current one) to a file."""
        (fig or plt.gcf()).savefig(filename, dpi=150, bbox_inches='tight')
        logger.info("plot saved to %s", filename)

    def show(self):
        """Display the plot."""
        plt.show()


def plot_reconstruction(
    recon: Reconstruction,
    graph: Optional[NeighborGraph] = None,
    directory=None,
    show: bool = True,
):
    """
    Convenience function: tracks of the first view and all 3D views.

    Args:
        recon: Reconstruction to draw
        graph: Neighbor graph for the track plot
        directory: Optional directory to write tracks.png and points.png
        show: Whether to display the plots
    """
    visualizer = ReconstructionVisualizer()

    figures = [
        visualizer.plot_tracks(recon.tracks, view=0, graph=graph),
        visualizer.plot_points(recon, title=f"Reconstruction ({recon.tracks.num_views} views)"),
    ]

    if directory is not None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for (fig, _), name in zip(figures, ("tracks.png", "points.png")):
            visualizer.save_plot(str(directory / name), fig)

    if show:
        visualizer.show()

    return figures
